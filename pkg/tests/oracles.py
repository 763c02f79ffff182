"""Independent brute-force oracles.

Nothing here touches the junction tree: the discrete joint is enumerated
configuration by configuration and, inside each, the continuous nodes form
a linear Gaussian system whose joint moments follow from the structural
equations X = b + B X + e.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from cgcontrol.model import Evidence, Network


def sem_moments(net: Network, dconfig: dict[str, int]) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Joint mean and covariance of all continuous nodes given every discrete state."""
    labels = list(net.continuous_labels)
    pos = {l: i for i, l in enumerate(labels)}
    n = len(labels)
    B = np.zeros((n, n))
    b = np.zeros(n)
    D = np.zeros(n)
    for l in labels:
        node = net.node(l)
        cfg = tuple(dconfig[p] for p in node.discrete_parents)
        i = pos[l]
        b[i] = node.intercept[cfg]
        D[i] = node.variance[cfg]
        for j, p in enumerate(node.continuous_parents):
            B[i, pos[p]] = node.coefficients[cfg][j]
    A = np.linalg.inv(np.eye(n) - B)
    return labels, A @ b, A @ np.diag(D) @ A.T


def condition_gaussian(mean, cov, obs_idx, obs_val):
    """Gaussian conditioning; returns (log density of obs, mean, cov) for the rest."""
    n = len(mean)
    obs_idx = list(obs_idx)
    rest = [i for i in range(n) if i not in obs_idx]
    if not obs_idx:
        return 0.0, mean[rest], cov[np.ix_(rest, rest)]
    S_oo = cov[np.ix_(obs_idx, obs_idx)]
    S_ro = cov[np.ix_(rest, obs_idx)]
    diff = np.asarray(obs_val) - mean[obs_idx]
    sol = np.linalg.solve(S_oo, diff)
    _, logdet = np.linalg.slogdet(S_oo)
    logpdf = -0.5 * (len(obs_idx) * np.log(2 * np.pi) + logdet + diff @ sol)
    m = mean[rest] + S_ro @ sol
    c = cov[np.ix_(rest, rest)] - S_ro @ np.linalg.solve(S_oo, S_ro.T)
    return logpdf, m, c


@dataclass
class Enumeration:
    """Every discrete configuration with its posterior log weight and the
    conditional Gaussian over the unobserved continuous nodes."""

    discrete: list[str]
    configs: list[tuple[int, ...]]
    log_weights: np.ndarray          # normalized posterior, -inf where excluded
    continuous: list[str]            # unobserved continuous labels
    means: list[np.ndarray]
    covs: list[np.ndarray]
    log_evidence: float


def enumerate_posterior(net: Network, z: Evidence | None = None) -> Enumeration:
    z = z or Evidence()
    dlabels = list(net.discrete_labels)
    cards = [net.cardinality(d) for d in dlabels]
    clabels = list(net.continuous_labels)
    obs = [clabels.index(l) for l in z.continuous]
    obs_val = [z.continuous[l] for l in z.continuous]
    rest = [l for l in clabels if l not in z.continuous]
    configs, lws, means, covs = [], [], [], []
    for cfg in itertools.product(*(range(c) for c in cards)):
        d = dict(zip(dlabels, cfg))
        if any(d[k] != v for k, v in z.discrete.items()):
            lp = -np.inf
        else:
            lp = 0.0
            for l in dlabels:
                node = net.node(l)
                p = node.cpt[tuple(d[q] for q in node.parents)][d[l]]
                lp += np.log(p) if p > 0 else -np.inf
        _, mu, S = sem_moments(net, d)
        ll, m, c = condition_gaussian(mu, S, obs, obs_val)
        configs.append(cfg)
        lws.append(lp + ll)
        means.append(m)
        covs.append(c)
    lws = np.array(lws)
    total = logsumexp(lws)
    return Enumeration(dlabels, configs, lws - total, rest, means, covs, float(total))


def oracle_discrete_marginal(en: Enumeration, label: str, cards: int) -> np.ndarray:
    i = en.discrete.index(label)
    out = np.zeros(cards)
    for cfg, lw in zip(en.configs, en.log_weights):
        out[cfg[i]] += np.exp(lw)
    return out


def oracle_moments(en: Enumeration, targets: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Exact posterior mean and covariance of the targets (mixture moments)."""
    idx = [en.continuous.index(t) for t in targets]
    w = np.exp(en.log_weights)
    mu = sum(wi * m[idx] for wi, m in zip(w, en.means))
    cov = sum(wi * (c[np.ix_(idx, idx)] + np.outer(m[idx] - mu, m[idx] - mu))
              for wi, m, c in zip(w, en.means, en.covs))
    return mu, cov


def oracle_mixture(en: Enumeration, targets: list[str], sources: list[str], *, atol: float = 1e-9):
    """Group the full enumeration by the source configuration.

    Returns ``{source_config: (weight, mean, cov)}`` and asserts that every
    member of a group has the same conditional Gaussian, which is what makes
    the source set sufficient.
    """
    idx = [en.continuous.index(t) for t in targets]
    sidx = [en.discrete.index(s) for s in sources]
    groups: dict[tuple, list] = {}
    for cfg, lw, m, c in zip(en.configs, en.log_weights, en.means, en.covs):
        if lw == -np.inf:
            continue
        key = tuple(cfg[i] for i in sidx)
        groups.setdefault(key, []).append((lw, m[idx], c[np.ix_(idx, idx)]))
    out = {}
    for key, members in groups.items():
        lw = np.array([x[0] for x in members])
        w = np.exp(logsumexp(lw))
        ref_m, ref_c = members[int(np.argmax(lw))][1:]
        for lwi, m, c in members:
            if lwi - lw.max() > -30:
                scale = 1.0 + np.abs(ref_m).max() + np.abs(ref_c).max()
                assert np.allclose(m, ref_m, atol=atol * scale) and np.allclose(c, ref_c, atol=atol * scale), \
                    "source set does not determine the conditional Gaussian"
        out[key] = (w, ref_m, ref_c)
    return out


def path_weight_oracle(net: Network, x: str, y: str) -> float:
    """Sum over directed paths x -> ... -> y of the product of linear
    coefficients, for a network with no discrete nodes."""
    total = 0.0

    def walk(node: str, acc: float):
        nonlocal total
        if node == y:
            total += acc
            return
        for child in net.children(node):
            cn = net.node(child)
            j = cn.continuous_parents.index(node)
            walk(child, acc * float(cn.coefficients[..., j]))

    walk(x, 1.0)
    return total
