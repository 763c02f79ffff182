"""CG potentials: one Gaussian canonical form per discrete configuration.

A potential over discrete variables ``D`` and continuous variables ``X``
stores, for every configuration ``d`` of ``D``, the function

    phi(d, x) = exp(g[d] + h[d]^T x - x^T K[d] x / 2)

``g`` lives in log space so products of many small densities do not
underflow; ``g = -inf`` marks a void (zero-weight) configuration. Void
configurations carry ``h = 0`` and ``K = 0``.

Division follows the junction-tree convention ``0 / 0 = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ArgumentError, DomainError, NumericalError, UndefinedDivisionError
from .model import VARIANCE_FLOOR, Evidence, configurations

LOG_2PI = math.log(2.0 * math.pi)
# configurations whose log-weight falls this far below the best one are void
LOG_VOID_GAP = 70.0


class CGPotential:
    """Table of canonical Gaussian forms indexed by discrete configuration."""

    __slots__ = ("discrete", "cards", "continuous", "g", "h", "K")

    def __init__(self, discrete: Sequence[str], cards: Sequence[int], continuous: Sequence[str],
                 g, h=None, K=None):
        self.discrete = tuple(discrete)
        self.cards = tuple(int(c) for c in cards)
        self.continuous = tuple(continuous)
        if len(self.discrete) != len(self.cards):
            raise DomainError("one cardinality per discrete variable is required")
        clash = set(self.discrete) & set(self.continuous)
        if clash:
            raise DomainError(f"variables both discrete and continuous: {sorted(clash)}")
        n = len(self.continuous)
        self.g = np.asarray(g, dtype=float).reshape(self.cards)
        self.h = (np.zeros(self.cards + (n,)) if h is None
                  else np.asarray(h, dtype=float).reshape(self.cards + (n,)))
        self.K = (np.zeros(self.cards + (n, n)) if K is None
                  else np.asarray(K, dtype=float).reshape(self.cards + (n, n)))

    # -- construction ------------------------------------------------------

    @classmethod
    def unit(cls, discrete: Sequence[str] = (), cards: Sequence[int] = (),
             continuous: Sequence[str] = ()) -> "CGPotential":
        return cls(discrete, cards, continuous, np.zeros(tuple(cards)))

    @classmethod
    def from_table(cls, discrete: Sequence[str], table) -> "CGPotential":
        """Purely discrete potential from a non-negative table."""
        table = np.asarray(table, dtype=float)
        with np.errstate(divide="ignore"):
            g = np.log(table)
        return cls(discrete, table.shape, (), g)

    @classmethod
    def indicator(cls, var: str, card: int, state: int) -> "CGPotential":
        if not 0 <= state < card:
            raise ArgumentError(f"state {state} out of range for {var!r}")
        g = np.full(card, -np.inf)
        g[state] = 0.0
        return cls((var,), (card,), (), g)

    @classmethod
    def from_clg(cls, head: str, discrete_parents: Sequence[str], cards: Sequence[int],
                 continuous_parents: Sequence[str], intercept, coefficients, variance) -> "CGPotential":
        """Density of ``head`` given its parents: N(a + b^T y, v)."""
        intercept = np.asarray(intercept, dtype=float)
        variance = np.asarray(variance, dtype=float)
        coefficients = np.asarray(coefficients, dtype=float)
        m = len(continuous_parents)
        w = np.concatenate([np.ones(intercept.shape + (1,)), -coefficients.reshape(intercept.shape + (m,))],
                           axis=-1)
        inv_v = 1.0 / variance
        K = w[..., :, None] * w[..., None, :] * inv_v[..., None, None]
        h = w * (intercept * inv_v)[..., None]
        g = -0.5 * intercept ** 2 * inv_v - 0.5 * (LOG_2PI + np.log(variance))
        return cls(discrete_parents, cards, (head,) + tuple(continuous_parents), g, h, K)

    # -- basic properties --------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.continuous)

    @property
    def void(self) -> np.ndarray:
        return np.isneginf(self.g)

    @property
    def variables(self) -> tuple[str, ...]:
        return self.discrete + self.continuous

    def __repr__(self) -> str:
        return (f"CGPotential(discrete={self.discrete}, cards={self.cards}, "
                f"continuous={self.continuous})")

    def copy(self) -> "CGPotential":
        return CGPotential(self.discrete, self.cards, self.continuous,
                           self.g.copy(), self.h.copy(), self.K.copy())

    def _clean(self) -> "CGPotential":
        v = self.void
        if v.any():
            self.h[v] = 0.0
            self.K[v] = 0.0
        return self

    def to_moments(self) -> "MomentTable":
        return to_moments(self)

    def total_log_mass(self) -> float:
        """log of the integral over continuous and sum over discrete."""
        p = marginalize_continuous(self, self.continuous) if self.n else self
        return float(logsumexp(p.g)) if p.g.size else 0.0

    def to_json(self) -> str:
        """Debug dump; not a stable interchange format."""
        rows = []
        for cfg in configurations(self.cards):
            void = bool(np.isneginf(self.g[cfg]))
            rows.append({
                "config": list(cfg),
                "void": void,
                "g": None if void else float(self.g[cfg]),
                "h": self.h[cfg].tolist(),
                "K": self.K[cfg].tolist(),
            })
        return json.dumps({"discrete": list(self.discrete), "cards": list(self.cards),
                           "continuous": list(self.continuous), "table": rows})


@dataclass(frozen=True)
class MomentSummary:
    """Weight, mean vector and covariance of one Gaussian component."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.cov)


@dataclass(frozen=True)
class MomentTable:
    """Moment form of a potential: per configuration (log-weight, mean, cov)."""

    discrete: tuple[str, ...]
    cards: tuple[int, ...]
    continuous: tuple[str, ...]
    log_weight: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    @property
    def void(self) -> np.ndarray:
        return np.isneginf(self.log_weight)

    def summary(self, config: Sequence[int] = ()) -> MomentSummary:
        cfg = tuple(config)
        return MomentSummary(float(np.exp(self.log_weight[cfg])), self.mean[cfg].copy(), self.cov[cfg].copy())


# -- helpers -----------------------------------------------------------------

def _cholesky(K: np.ndarray) -> np.ndarray:
    """Batched Cholesky with one diagonal floor repair per failing matrix."""
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    flat = K.reshape((-1,) + K.shape[-2:])
    out = np.empty_like(flat)
    eye = np.eye(K.shape[-1])
    for i, m in enumerate(flat):
        try:
            out[i] = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            try:
                out[i] = np.linalg.cholesky(m + VARIANCE_FLOOR * eye)
            except np.linalg.LinAlgError:
                raise NumericalError("precision matrix is not positive definite") from None
    return out.reshape(K.shape)


def _chol_inverse(L: np.ndarray) -> np.ndarray:
    n = L.shape[-1]
    eye = np.broadcast_to(np.eye(n), L.shape)
    Linv = np.linalg.solve(L, eye)
    return np.swapaxes(Linv, -1, -2) @ Linv


def _logdet_from_chol(L: np.ndarray) -> np.ndarray:
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def _symmetrize(K: np.ndarray) -> np.ndarray:
    return 0.5 * (K + np.swapaxes(K, -1, -2))


# -- domain alignment -------------------------------------------------------

def extend(p: CGPotential, discrete: Sequence[str], cards: Sequence[int],
           continuous: Sequence[str]) -> CGPotential:
    """Re-express ``p`` on a larger (or reordered) domain.

    New discrete variables replicate the table; new continuous variables
    enter with zero rows in ``h`` and ``K``.
    """
    discrete, cards, continuous = tuple(discrete), tuple(int(c) for c in cards), tuple(continuous)
    if set(discrete) & set(continuous):
        raise DomainError("a variable cannot be both discrete and continuous")
    card_of = dict(zip(discrete, cards))
    for v, c in zip(p.discrete, p.cards):
        if v not in card_of:
            raise DomainError(f"discrete variable {v!r} missing from target domain"
                              if v not in continuous else f"{v!r} is discrete in the potential")
        if card_of[v] != c:
            raise DomainError(f"cardinality mismatch for {v!r}")
    for v in p.continuous:
        if v not in continuous:
            raise DomainError(f"continuous variable {v!r} missing from target domain"
                              if v not in discrete else f"{v!r} is continuous in the potential")

    n, n_new = p.n, len(continuous)
    if discrete == p.discrete:
        g, h, K = p.g, p.h, p.K
    else:
        present = [v for v in discrete if v in p.discrete]
        perm = [p.discrete.index(v) for v in present]
        shape = tuple(card_of[v] if v in p.discrete else 1 for v in discrete)
        g = np.transpose(p.g, perm).reshape(shape)
        h = np.transpose(p.h, perm + [len(perm)]).reshape(shape + (n,))
        K = np.transpose(p.K, perm + [len(perm), len(perm) + 1]).reshape(shape + (n, n))
        g = np.broadcast_to(g, cards)
        h = np.broadcast_to(h, cards + (n,))
        K = np.broadcast_to(K, cards + (n, n))

    if continuous == p.continuous:
        return CGPotential(discrete, cards, continuous, np.array(g), np.array(h), np.array(K))
    idx = np.array([continuous.index(v) for v in p.continuous], dtype=int)
    h2 = np.zeros(cards + (n_new,))
    K2 = np.zeros(cards + (n_new, n_new))
    if n:
        h2[..., idx] = h
        K2[..., idx[:, None], idx[None, :]] = K
    return CGPotential(discrete, cards, continuous, np.array(g), h2, K2)


def _union(a: CGPotential, b: CGPotential):
    discrete = list(a.discrete)
    cards = list(a.cards)
    for v, c in zip(b.discrete, b.cards):
        if v not in discrete:
            discrete.append(v)
            cards.append(c)
    continuous = list(a.continuous) + [v for v in b.continuous if v not in a.continuous]
    return discrete, cards, continuous


def multiply(a: CGPotential, b: CGPotential) -> CGPotential:
    discrete, cards, continuous = _union(a, b)
    x = extend(a, discrete, cards, continuous)
    y = extend(b, discrete, cards, continuous)
    return CGPotential(discrete, cards, continuous, x.g + y.g, x.h + y.h, x.K + y.K)._clean()


def divide(a: CGPotential, b: CGPotential) -> CGPotential:
    """``a / b`` with 0/0 = 0; a void divisor under a live numerator raises."""
    discrete, cards, continuous = _union(a, b)
    x = extend(a, discrete, cards, continuous)
    y = extend(b, discrete, cards, continuous)
    vx, vy = x.void, y.void
    if np.any(vy & ~vx):
        raise UndefinedDivisionError("division by a void configuration with non-void numerator")
    with np.errstate(invalid="ignore"):
        g = np.where(vy | vx, -np.inf, x.g - y.g)
    return CGPotential(discrete, cards, continuous, g, x.h - y.h, x.K - y.K)._clean()


# -- evidence ----------------------------------------------------------------

def reduce_evidence(p: CGPotential, ev: Evidence) -> CGPotential:
    """Instantiate observed variables of ``p`` (others in ``ev`` are ignored).

    Discrete observations slice the table; continuous observations are
    substituted exactly into ``(g, h, K)``.
    """
    for v in ev.discrete:
        if v in p.continuous:
            raise DomainError(f"{v!r} is continuous in the potential")
    for v in ev.continuous:
        if v in p.discrete:
            raise DomainError(f"{v!r} is discrete in the potential")

    g, h, K = p.g, p.h, p.K
    discrete, cards = list(p.discrete), list(p.cards)
    for v, state in ev.discrete.items():
        if v not in discrete:
            continue
        ax = discrete.index(v)
        if not 0 <= state < cards[ax]:
            raise ArgumentError(f"state {state} out of range for {v!r}")
        g = np.take(g, state, axis=ax)
        h = np.take(h, state, axis=ax)
        K = np.take(K, state, axis=ax)
        del discrete[ax]
        del cards[ax]

    obs = [i for i, v in enumerate(p.continuous) if v in ev.continuous]
    if not obs:
        return CGPotential(discrete, cards, p.continuous, np.array(g), np.array(h), np.array(K))
    rest = [i for i in range(p.n) if i not in obs]
    x = np.array([ev.continuous[p.continuous[i]] for i in obs])
    h_o = h[..., obs]
    K_oo = K[..., obs, :][..., :, obs]
    K_ro = K[..., rest, :][..., :, obs]
    g2 = g + h_o @ x - 0.5 * np.einsum("...ij,i,j->...", K_oo, x, x)
    h2 = h[..., rest] - K_ro @ x
    K2 = K[..., rest, :][..., :, rest]
    out = CGPotential(discrete, cards, [p.continuous[i] for i in rest], g2, h2, np.array(K2))
    return out._clean()


# -- marginalization --------------------------------------------------------

def marginalize_continuous(p: CGPotential, variables: Iterable[str]) -> CGPotential:
    """Integrate continuous variables out exactly (strong marginal)."""
    elim = list(dict.fromkeys(variables))
    for v in elim:
        if v not in p.continuous:
            raise DomainError(f"{v!r} is not a continuous variable of the potential")
    if not elim:
        return p.copy()
    e = [p.continuous.index(v) for v in elim]
    r = [i for i in range(p.n) if i not in e]
    void = p.void
    K_ee = p.K[..., e, :][..., :, e]
    if void.any():
        K_ee = K_ee.copy()
        K_ee[void] = np.eye(len(e))
    L = _cholesky(K_ee)
    K_er = p.K[..., e, :][..., :, r]
    h_e = p.h[..., e]
    rhs = np.concatenate([K_er, h_e[..., None]], axis=-1)
    sol = np.linalg.solve(np.swapaxes(L, -1, -2), np.linalg.solve(L, rhs))
    A, b = sol[..., :-1], sol[..., -1]
    K_re = np.swapaxes(K_er, -1, -2)
    K2 = _symmetrize(p.K[..., r, :][..., :, r] - K_re @ A)
    h2 = p.h[..., r] - (K_re @ b[..., None])[..., 0]
    g2 = p.g + 0.5 * (len(e) * LOG_2PI - _logdet_from_chol(L) + np.sum(h_e * b, axis=-1))
    return CGPotential(p.discrete, p.cards, [p.continuous[i] for i in r], g2, h2, K2)._clean()


def to_moments(p: CGPotential) -> MomentTable:
    """Convert every configuration to (log-weight, mean, covariance).

    Requires each non-void ``K`` to be positive definite. Configurations
    more than ``LOG_VOID_GAP`` below the best log-weight are flagged void.
    """
    n = p.n
    void = p.void
    if n == 0:
        logw = p.g.copy()
        mean = np.zeros(p.cards + (0,))
        cov = np.zeros(p.cards + (0, 0))
    else:
        K = _symmetrize(p.K)
        if void.any():
            K = K.copy()
            K[void] = np.eye(n)
        L = _cholesky(K)
        cov = _symmetrize(_chol_inverse(L))
        mean = (cov @ p.h[..., None])[..., 0]
        logw = p.g + 0.5 * np.sum(p.h * mean, axis=-1) + 0.5 * n * LOG_2PI - 0.5 * _logdet_from_chol(L)
        logw = np.where(void, -np.inf, logw)
    live = ~np.isneginf(logw)
    if live.any():
        top = logw[live].max()
        logw = np.where(logw < top - LOG_VOID_GAP, -np.inf, logw)
    dead = np.isneginf(logw)
    if n and dead.any():
        mean = mean.copy()
        cov = cov.copy()
        mean[dead] = 0.0
        cov[dead] = 0.0
    return MomentTable(p.discrete, p.cards, p.continuous, logw, mean, cov)


def from_moments(discrete: Sequence[str], cards: Sequence[int], continuous: Sequence[str],
                 log_weight, mean, cov) -> CGPotential:
    """Inverse of :func:`to_moments`."""
    cards = tuple(cards)
    n = len(continuous)
    log_weight = np.asarray(log_weight, dtype=float).reshape(cards)
    if n == 0:
        return CGPotential(discrete, cards, continuous, log_weight.copy())
    mean = np.asarray(mean, dtype=float).reshape(cards + (n,))
    cov = _symmetrize(np.asarray(cov, dtype=float).reshape(cards + (n, n)))
    void = np.isneginf(log_weight)
    if void.any():
        cov = cov.copy()
        cov[void] = np.eye(n)
    L = _cholesky(cov)
    K = _symmetrize(_chol_inverse(L))
    h = (K @ mean[..., None])[..., 0]
    g = log_weight - 0.5 * np.sum(h * mean, axis=-1) - 0.5 * n * LOG_2PI - 0.5 * _logdet_from_chol(L)
    g = np.where(void, -np.inf, g)
    return CGPotential(discrete, cards, continuous, g, h, K)._clean()


def marginalize_discrete_weak(p: CGPotential, variables: Iterable[str]) -> CGPotential:
    """Sum discrete variables out, collapsing each group to one Gaussian.

    The collapsed component keeps the total weight, the weighted mean and
    the law-of-total-covariance second moment of the group. When every
    live member of a group shares the same ``(h, K)`` the sum is exact and
    is taken in canonical form, which also covers non-normalizable
    potentials.
    """
    elim = list(dict.fromkeys(variables))
    for v in elim:
        if v not in p.discrete:
            raise DomainError(f"{v!r} is not a discrete variable of the potential")
    if not elim:
        return p.copy()
    keep = [i for i, v in enumerate(p.discrete) if v not in elim]
    axes = [p.discrete.index(v) for v in elim]
    order = keep + axes
    kcards = tuple(p.cards[i] for i in keep)
    gsize = int(np.prod([p.cards[i] for i in axes]))
    n = p.n
    kdisc = [p.discrete[i] for i in keep]

    g = np.transpose(p.g, order).reshape(kcards + (gsize,))
    if n == 0:
        return CGPotential(kdisc, kcards, (), logsumexp(g, axis=-1))

    h = np.transpose(p.h, order + [len(order)]).reshape(kcards + (gsize, n))
    K = np.transpose(p.K, order + [len(order), len(order) + 1]).reshape(kcards + (gsize, n, n))
    live = ~np.isneginf(g)
    # exact canonical sum when the continuous part does not vary inside groups
    ref = np.argmax(live, axis=-1)
    h_ref = np.take_along_axis(h, ref[..., None, None], axis=-2)
    K_ref = np.take_along_axis(K, ref[..., None, None, None], axis=-3)
    same = np.all(~live[..., None] | (h == h_ref), axis=(-2, -1)) & \
        np.all(~live[..., None, None] | (K == K_ref), axis=(-3, -2, -1))
    if np.all(same):
        with np.errstate(invalid="ignore"):
            g2 = logsumexp(g, axis=-1)
        return CGPotential(kdisc, kcards, p.continuous, g2, h_ref[..., 0, :], K_ref[..., 0, :, :])._clean()

    mt = to_moments(CGPotential(kdisc + ["__group__"], kcards + (gsize,), p.continuous, g, h, K))
    logw = mt.log_weight
    with np.errstate(invalid="ignore"):
        total = logsumexp(logw, axis=-1)
    dead = np.isneginf(total)
    w = np.exp(logw - np.where(dead, 0.0, total)[..., None])
    w = np.where(np.isneginf(logw), 0.0, w)
    mu = np.sum(w[..., None] * mt.mean, axis=-2)
    d = mt.mean - mu[..., None, :]
    cov = np.sum(w[..., None, None] * (mt.cov + d[..., :, None] * d[..., None, :]), axis=-3)
    if dead.any():
        cov[dead] = np.eye(n)
    return from_moments(kdisc, kcards, p.continuous, total, mu, cov)


def marginalize(p: CGPotential, keep: Iterable[str]) -> CGPotential:
    """Marginal on ``keep``: integrate continuous variables, then sum
    discrete ones (weakly when continuous variables remain)."""
    keep = set(keep)
    p = marginalize_continuous(p, [v for v in p.continuous if v not in keep])
    return marginalize_discrete_weak(p, [v for v in p.discrete if v not in keep])


def normalize(p: CGPotential) -> CGPotential:
    total = p.total_log_mass()
    if not np.isfinite(total):
        raise NumericalError("cannot normalize a potential with zero mass")
    return CGPotential(p.discrete, p.cards, p.continuous, p.g - total, p.h.copy(), p.K.copy())
