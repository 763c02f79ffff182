"""Exact Gaussian-mixture posteriors of continuous nodes.

A continuous node in a CG network is Gaussian once its nearest discrete
ancestors are fixed, so its exact posterior is a mixture with one component
per configuration of those "mixture sources". The enumeration instantiates
the sources one at a time, depth first: the probability of each state is
read from the calibrated tree, multiplied into the running weight, the
state is asserted, and the affected branch of the clique tree is
re-propagated before descending.

Evidence below the target can make further discrete nodes relevant (an
observed common child d-connects them). Those are added to the sources so
each component stays exactly Gaussian; without such evidence the sources
are exactly the discrete boundary of the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import networkx as nx
import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .errors import ArgumentError, CapacityError
from .inference import (
    CalibratedTree,
    branch_repropagate,
    cached_clique_tree,
    propagate,
)
from .model import VARIANCE_FLOOR, Evidence, Network, check_evidence, discrete_boundary
from .potential import LOG_2PI, MomentSummary, extend, marginalize, to_moments

DEFAULT_MAX_CONFIGS = 10 ** 6
WEIGHT_TOLERANCE = 1e-9


class GaussianMixture:
    """Univariate Gaussian mixture with optional per-component source labels."""

    __slots__ = ("weights", "means", "variances", "labels", "sources", "target")

    def __init__(self, weights, means, variances, labels: Sequence[tuple] = (),
                 sources: Sequence[str] = (), target: str = "", check: bool = True):
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        self.means = np.asarray(means, dtype=float).reshape(-1)
        self.variances = np.asarray(variances, dtype=float).reshape(-1)
        self.labels = tuple(tuple(l) for l in labels)
        self.sources = tuple(sources)
        self.target = target
        if check:
            k = len(self.weights)
            if k == 0 or len(self.means) != k or len(self.variances) != k:
                raise ArgumentError("weights, means and variances must have the same non-zero length")
            if self.labels and len(self.labels) != k:
                raise ArgumentError("one label per component is required")
            if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > WEIGHT_TOLERANCE:
                raise ArgumentError("mixture weights must be positive and sum to 1")
            if np.any(self.variances < VARIANCE_FLOOR):
                raise ArgumentError("component variance below the floor")

    def __len__(self) -> int:
        return len(self.weights)

    def __repr__(self) -> str:
        return f"GaussianMixture({len(self)} components, target={self.target!r})"

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.variances + (self.means - m) ** 2))

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        comp = -0.5 * (LOG_2PI + np.log(self.variances) + (x - self.means) ** 2 / self.variances)
        return logsumexp(comp + np.log(self.weights), axis=-1)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "sources": list(self.sources),
            "components": [
                {"weight": float(w), "mean": float(m), "variance": float(v),
                 **({"source": list(self.labels[i])} if self.labels else {})}
                for i, (w, m, v) in enumerate(zip(self.weights, self.means, self.variances))
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianMixture":
        comps = doc["components"]
        labels = [tuple(c["source"]) for c in comps] if comps and "source" in comps[0] else ()
        return cls([c["weight"] for c in comps], [c["mean"] for c in comps],
                   [c["variance"] for c in comps], labels, doc.get("sources", ()), doc.get("target", ""))


class JointGaussianMixture:
    """Mixture of d-variate Gaussians over the named targets (d = 2 for the
    sensor/contamination pair)."""

    __slots__ = ("weights", "means", "covs", "names", "labels", "sources")

    def __init__(self, weights, means, covs, names: Sequence[str], labels: Sequence[tuple] = (),
                 sources: Sequence[str] = ()):
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        k = len(self.weights)
        self.names = tuple(names)
        d = len(self.names)
        self.means = np.asarray(means, dtype=float).reshape(k, d)
        self.covs = np.asarray(covs, dtype=float).reshape(k, d, d)
        self.labels = tuple(tuple(l) for l in labels)
        self.sources = tuple(sources)
        if k == 0:
            raise ArgumentError("a mixture needs at least one component")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ArgumentError("mixture weights must be positive and sum to 1")
        if not np.allclose(self.covs, np.swapaxes(self.covs, 1, 2), rtol=1e-10, atol=1e-12):
            raise ArgumentError("component covariances must be symmetric")
        if np.any(np.linalg.eigvalsh(self.covs) < -1e-10 * np.abs(self.covs).max()):
            raise ArgumentError("component covariances must be positive semi-definite")

    def __len__(self) -> int:
        return len(self.weights)

    def __repr__(self) -> str:
        return f"JointGaussianMixture({len(self)} components over {self.names})"

    @property
    def dim(self) -> int:
        return len(self.names)

    def marginal(self, name: str) -> GaussianMixture:
        i = self.names.index(name)
        return GaussianMixture(self.weights, self.means[:, i], self.covs[:, i, i],
                               self.labels, self.sources, name)

    def correlations(self, a: int = 0, b: int = 1) -> np.ndarray:
        c = self.covs
        return c[:, a, b] / np.sqrt(c[:, a, a] * c[:, b, b])

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dim
        L = np.linalg.cholesky(self.covs)
        diff = x[..., None, :] - self.means
        sol = np.linalg.solve(L, diff[..., None])[..., 0]
        maha = np.sum(sol ** 2, axis=-1)
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        comp = -0.5 * (d * LOG_2PI + logdet + maha)
        return logsumexp(comp + np.log(self.weights), axis=-1)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "sources": list(self.sources),
            "components": [
                {"weight": float(w), "mean": m.tolist(), "cov": c.tolist(),
                 **({"source": list(self.labels[i])} if self.labels else {})}
                for i, (w, m, c) in enumerate(zip(self.weights, self.means, self.covs))
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "JointGaussianMixture":
        comps = doc["components"]
        labels = [tuple(c["source"]) for c in comps] if comps and "source" in comps[0] else ()
        return cls([c["weight"] for c in comps], [c["mean"] for c in comps],
                   [c["cov"] for c in comps], doc["names"], labels, doc.get("sources", ()))


# -- mixture sources ---------------------------------------------------------

def _dag(net: Network) -> nx.DiGraph:
    g = net._cache.get("digraph")
    if g is None:
        g = nx.DiGraph()
        g.add_nodes_from(net.labels)
        g.add_edges_from(net.edges)
        net._cache["digraph"] = g
    return g


def mixture_sources(net: Network, targets: Sequence[str], z: Evidence | None = None) -> list[str]:
    """Discrete nodes whose configuration selects the Gaussian component of
    ``targets`` given ``z``, sorted by node index.

    Starts from the union of the targets' discrete boundaries and adds any
    unobserved discrete node that is still d-connected to the targets given
    the current sources and the observed nodes.
    """
    z = z or Evidence()
    sources: set[str] = set()
    for t in targets:
        sources |= set(discrete_boundary(net, t))
    sources -= set(z.discrete)
    dag = _dag(net)
    tset = set(targets)
    candidates = [d for d in net.discrete_labels if d not in z.discrete]
    changed = True
    while changed:
        changed = False
        cond = sources | set(z.nodes)
        for d in candidates:
            if d in sources:
                continue
            if not nx.is_d_separator(dag, tset, {d}, cond):
                sources.add(d)
                changed = True
                break
    return net.sorted_labels(sources)


# -- enumeration ---------------------------------------------------------------

@dataclass
class _Component:
    config: tuple[int, ...]
    log_weight: float
    mean: np.ndarray
    cov: np.ndarray


def _state_probs(st: CalibratedTree, var: str) -> np.ndarray:
    tree = st.tree
    host = min((i for i in st.potentials if var in tree.cliques[i]),
               key=lambda i: (len(tree.cliques[i]), i))
    pot = marginalize(st.potentials[host], [var])
    lw = to_moments(pot).log_weight
    return lw - logsumexp(lw)


def _finish_in_clique(st: CalibratedTree, remaining: list[str], targets: list[str]):
    """Read the rest of the enumeration from one clique holding the remaining
    sources and every target, or return None if there is no such clique."""
    tree = st.tree
    need = set(remaining) | set(targets)
    hosts = [i for i in st.potentials if need <= set(tree.cliques[i])]
    if not hosts:
        return None
    host = min(hosts, key=lambda i: (len(tree.cliques[i]), i))
    pot = marginalize(st.potentials[host], need)
    net = tree.net
    pot = extend(pot, remaining, [net.cardinality(v) for v in remaining], targets)
    return to_moments(pot)


def _source_host(tree, var: str, target_host: int) -> int:
    """Clique for instantiating ``var``: on the target's path to the root if
    possible, so the branch stays as small as the tree allows."""
    for i in tree.path_to_root(target_host):
        if var in tree.cliques[i]:
            return i
    return tree.smallest_clique([var])


def _enumerate(net: Network, targets: list[str], z: Evidence, max_configs: int, method: str):
    for t in targets:
        if t not in net or net.is_discrete(t):
            raise ArgumentError(f"{t!r} is not a continuous node")
        if t in z:
            raise ArgumentError(f"target {t!r} is observed")
    check_evidence(net, z)
    sources = mixture_sources(net, targets, z)
    n_configs = math.prod(net.cardinality(s) for s in sources)
    if n_configs > max_configs:
        raise CapacityError(f"{len(sources)} mixture sources span {n_configs} configurations "
                            f"(cap {max_configs})")
    if method not in ("branch", "full"):
        raise ArgumentError(f"unknown method {method!r}")

    query = (tuple(targets),) if len(targets) > 1 else ()
    tree = cached_clique_tree(net, query)
    cal = propagate(tree, z)
    target_host = tree.smallest_clique(targets)
    branch = {target_host} | {_source_host(tree, s, target_host) for s in sources}

    def update(assign: dict[str, int]) -> CalibratedTree:
        if not assign:
            return cal
        delta = Evidence(assign)
        if method == "full":
            return propagate(tree, z.merge(delta))
        return branch_repropagate(cal, branch, delta)

    comps: list[_Component] = []

    def leaf(st: CalibratedTree, config: tuple, logw: float):
        mt = _finish_in_clique(st, [], targets)
        comps.append(_Component(config, logw, mt.mean.copy(), mt.cov.copy()))

    def recurse(level: int, assign: dict[str, int], config: tuple, logw: float):
        st = update(assign)
        if level == len(sources):
            leaf(st, config, logw)
            return
        remaining = sources[level:]
        if method == "branch":
            mt = _finish_in_clique(st, remaining, targets)
            if mt is not None:
                lw = mt.log_weight - logsumexp(mt.log_weight)
                for cfg in np.ndindex(*mt.log_weight.shape):
                    if np.isneginf(lw[cfg]):
                        continue
                    comps.append(_Component(config + cfg, logw + float(lw[cfg]),
                                            mt.mean[cfg].copy(), mt.cov[cfg].copy()))
                return
        var = sources[level]
        logp = _state_probs(st, var)
        for s in range(len(logp)):
            if np.isneginf(logp[s]):
                continue
            recurse(level + 1, {**assign, var: s}, config + (s,), logw + float(logp[s]))

    recurse(0, {}, (), 0.0)
    lw = np.array([c.log_weight for c in comps])
    lw -= logsumexp(lw)
    keep = lw > -np.inf
    w = np.exp(lw[keep])
    w /= w.sum()
    kept = [c for c, k in zip(comps, keep) if k]
    labels = [tuple(net.node(s).states[i] for s, i in zip(sources, c.config)) for c in kept]
    means = np.array([c.mean for c in kept])
    covs = np.array([c.cov for c in kept])
    return sources, w, means, covs, labels


def exact_mixture(net: Network, x: str, z: Evidence | None = None, *,
                  max_configs: int = DEFAULT_MAX_CONFIGS, method: str = "branch") -> GaussianMixture:
    """Exact posterior of continuous node ``x`` given ``z`` as a mixture.

    ``method="full"`` re-propagates the whole tree at every step instead of
    the branch holding the sources and ``x``; it exists for cross-checks.
    """
    z = z or Evidence()
    sources, w, means, covs, labels = _enumerate(net, [x], z, max_configs, method)
    var = np.maximum(covs[:, 0, 0], VARIANCE_FLOOR)
    return GaussianMixture(w, means[:, 0], var, labels, sources, x)


def exact_joint_mixture(net: Network, xs: Sequence[str], z: Evidence | None = None, *,
                        max_configs: int = DEFAULT_MAX_CONFIGS,
                        method: str = "branch") -> JointGaussianMixture:
    """Exact joint posterior of several continuous nodes as a mixture."""
    z = z or Evidence()
    xs = list(xs)
    if len(set(xs)) != len(xs):
        raise ArgumentError("targets must be distinct")
    sources, w, means, covs, labels = _enumerate(net, xs, z, max_configs, method)
    return JointGaussianMixture(w, means, covs, xs, labels, sources)


# -- Gaussian approximation diagnostics --------------------------------------

def moment_match(m: GaussianMixture | JointGaussianMixture) -> MomentSummary:
    """Single Gaussian with the mixture's mean and covariance."""
    if isinstance(m, GaussianMixture):
        means = m.means[:, None]
        covs = m.variances[:, None, None]
    else:
        means, covs = m.means, m.covs
    mu = m.weights @ means
    d = means - mu
    cov = np.einsum("k,kij->ij", m.weights, covs + d[:, :, None] * d[:, None, :])
    return MomentSummary(1.0, mu, 0.5 * (cov + cov.T))


def _as_gaussian(g) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(g, MomentSummary):
        mean, cov = g.mean, g.cov
    else:
        mean, cov = g
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (len(mean), len(mean)) or not np.allclose(cov, cov.T):
        raise ArgumentError("covariance must be a symmetric matrix matching the mean")
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ArgumentError("covariance must be positive definite")
    return mean, cov


def _mixture_arrays(m):
    if isinstance(m, GaussianMixture):
        return m.weights, m.means[:, None], m.variances[:, None, None]
    return m.weights, m.means, m.covs


def _expected_log_gaussian(w, means, covs, mean, cov) -> float:
    d = len(mean)
    prec = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    diff = means - mean
    quad = np.einsum("ki,ij,kj->k", diff, prec, diff) + np.einsum("ij,kji->k", prec, covs)
    return float(w @ (-0.5 * (d * LOG_2PI + logdet + quad)))


def _negative_entropy_1d(m: GaussianMixture, tol: float) -> float:
    sd = np.sqrt(m.variances)
    lo = float(np.min(m.means - 12 * sd))
    hi = float(np.max(m.means + 12 * sd))

    def f(x):
        lp = float(m.logpdf(x))
        return math.exp(lp) * lp

    pts = sorted(set(np.clip(np.concatenate([m.means, m.means - 3 * sd, m.means + 3 * sd]), lo, hi)))
    val, _ = integrate.quad(f, lo, hi, points=pts[:100], epsabs=tol, epsrel=0.0, limit=500)
    return val


def _negative_entropy_gh(m: JointGaussianMixture, tol: float) -> float:
    """sum_k w_k E_{N_k}[log m] with tensor Gauss-Hermite rules, doubling
    the order until two successive estimates agree."""
    d = m.dim
    L = np.linalg.cholesky(m.covs + VARIANCE_FLOOR * np.eye(d))
    prev = None
    for order in (16, 32, 64, 128):
        x, wq = np.polynomial.hermite.hermgauss(order)
        z = np.sqrt(2.0) * x
        wq = wq / math.sqrt(math.pi)
        grids = np.meshgrid(*([z] * d), indexing="ij")
        pts = np.stack([gg.reshape(-1) for gg in grids], axis=-1)
        wgrid = np.ones(1)
        for _ in range(d):
            wgrid = np.outer(wgrid, wq).reshape(-1)
        total = 0.0
        for k in range(len(m)):
            xs = m.means[k] + pts @ L[k].T
            total += m.weights[k] * float(wgrid @ m.logpdf(xs))
        if prev is not None and abs(total - prev) < tol:
            return total
        prev = total
    return prev


def kl_mixture_to_gaussian(m: GaussianMixture | JointGaussianMixture, g, tol: float = 1e-5) -> float:
    """KL(m || g) in nats.

    The cross term is closed form; the mixture's negative entropy is
    integrated numerically (adaptive quadrature in 1-D, order-doubling
    Gauss-Hermite per component in higher dimension).
    """
    mean, cov = _as_gaussian(g)
    w, means, covs = _mixture_arrays(m)
    if means.shape[1] != len(mean):
        raise ArgumentError("dimension mismatch between mixture and Gaussian")
    cross = _expected_log_gaussian(w, means, covs, mean, cov)
    if isinstance(m, GaussianMixture):
        neg_h = _negative_entropy_1d(m, tol)
    else:
        neg_h = _negative_entropy_gh(m, tol)
    return max(0.0, neg_h - cross)


@dataclass(frozen=True)
class Ellipse:
    center: np.ndarray
    axes: tuple[float, float]
    angle: float


def chi2_2dof_quantile(coverage: float) -> float:
    return -2.0 * math.log1p(-coverage)


def ellipse_params(mean, cov, coverage: float = 0.95) -> Ellipse:
    """Coverage ellipse of a bivariate Gaussian.

    ``axes`` are the semi-axis lengths (major first); ``angle`` is the
    direction of the major axis in radians, in (-pi/2, pi/2].
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    if mean.shape != (2,) or cov.shape != (2, 2):
        raise ArgumentError("ellipses need a 2-D mean and a 2x2 covariance")
    if not np.allclose(cov, cov.T) or not 0 < coverage < 1:
        raise ArgumentError("covariance must be symmetric and coverage in (0, 1)")
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] < -1e-12 * max(1.0, abs(vals[1])):
        raise ArgumentError("covariance is not positive semi-definite")
    vals = np.clip(vals, 0.0, None)
    q = chi2_2dof_quantile(coverage)
    major = vecs[:, 1]
    angle = math.atan2(major[1], major[0])
    if angle <= -math.pi / 2:
        angle += math.pi
    elif angle > math.pi / 2:
        angle -= math.pi
    return Ellipse(mean.copy(), (math.sqrt(q * vals[1]), math.sqrt(q * vals[0])), angle)


def ellipse_covariance(e: Ellipse, coverage: float = 0.95) -> np.ndarray:
    """Covariance reconstructed from ellipse parameters."""
    q = chi2_2dof_quantile(coverage)
    c, s = math.cos(e.angle), math.sin(e.angle)
    R = np.array([[c, -s], [s, c]])
    return R @ np.diag([e.axes[0] ** 2 / q, e.axes[1] ** 2 / q]) @ R.T
