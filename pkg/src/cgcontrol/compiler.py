"""Batch-staging compilation of the runtime controller.

Once the slow evidence (the batch assay) is in, the joint posterior of the
sensor and the contamination target is a fixed mixture of bivariate
Gaussians. Storing it lets every sensor reading be handled by a handful of
vectorized operations, and scanning it once more turns the optimal
decision into a sorted list of sensor intervals on which to divert.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decision import Action, Policy, survival
from .errors import ArgumentError, StaleModelError
from .mixture import DEFAULT_MAX_CONFIGS, GaussianMixture, JointGaussianMixture, exact_joint_mixture
from .model import VARIANCE_FLOOR, Evidence, Network
from .potential import LOG_2PI

__all__ = [
    "CompiledModel",
    "DivertRule",
    "Policy",
    "compile",
    "compile_model",
    "compile_rule",
    "rule_decide",
    "sensor_posterior",
    "tail_curve",
]

logger = logging.getLogger(__name__)

DEFAULT_GRID_POINTS = 4096
BOUNDARY_TOLERANCE = 1e-9
SCAN_WIDTH = 6.0


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class CompiledModel:
    """Mixture over (sensor, target) with the slow evidence baked in.

    Component ``k`` has weight ``weights[k]``, mean ``means[k]`` and
    covariance ``covs[k]``, ordered as ``(sensor, target)``.
    """

    def __init__(self, sensor: str, target: str, weights, means, covs,
                 baked_evidence: dict, labels: Sequence[tuple] = (), sources: Sequence[str] = (),
                 network_hash: str = "", evidence_hash: str = ""):
        self.sensor = sensor
        self.target = target
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float).reshape(-1, 2)
        self.covs = np.asarray(covs, dtype=float).reshape(-1, 2, 2)
        self.baked_evidence = dict(baked_evidence)
        self.labels = tuple(tuple(l) for l in labels)
        self.sources = tuple(sources)
        self.network_hash = network_hash
        self.evidence_hash = evidence_hash
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights <= 0):
            raise ArgumentError("component weights must be positive and sum to 1")
        if np.any(np.linalg.eigvalsh(self.covs)[:, 0] < -1e-12):
            raise ArgumentError("component covariances must be positive semi-definite")
        if np.any(self.covs[:, 0, 0] <= 0):
            raise ArgumentError("sensor variance must be positive in every component")

        # runtime constants
        self._log_w = np.log(self.weights)
        self._mu_s = self.means[:, 0].copy()
        self._var_s = self.covs[:, 0, 0].copy()
        self._mu_t = self.means[:, 1].copy()
        self._slope = self.covs[:, 0, 1] / self._var_s
        self._cond_var = np.maximum(self.covs[:, 1, 1] - self.covs[:, 0, 1] * self._slope, VARIANCE_FLOOR)
        self._cond_sd = np.sqrt(self._cond_var)
        self._log_norm = self._log_w - 0.5 * (LOG_2PI + np.log(self._var_s))

    def __len__(self) -> int:
        return len(self.weights)

    def __repr__(self) -> str:
        return f"CompiledModel({len(self)} components, {self.sensor!r} -> {self.target!r})"

    def as_mixture(self) -> JointGaussianMixture:
        return JointGaussianMixture(self.weights, self.means, self.covs, (self.sensor, self.target),
                                    self.labels, self.sources)

    def scan_range(self, width: float = SCAN_WIDTH) -> tuple[float, float]:
        sd = math.sqrt(float(self._var_s.max()))
        return float(self._mu_s.min() - width * sd), float(self._mu_s.max() + width * sd)

    def to_dict(self) -> dict:
        return {
            "kind": "compiled_model",
            "schema_version": 1,
            "sensor": self.sensor,
            "target": self.target,
            "baked_evidence": self.baked_evidence,
            "network_hash": self.network_hash,
            "evidence_hash": self.evidence_hash,
            "sources": list(self.sources),
            "components": [
                {"weight": float(w), "mean": [float(v) for v in m],
                 "cov": [[float(v) for v in row] for row in c],
                 "source": list(self.labels[i]) if self.labels else []}
                for i, (w, m, c) in enumerate(zip(self.weights, self.means, self.covs))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "CompiledModel":
        if doc.get("kind") != "compiled_model":
            raise ArgumentError("not a compiled model document")
        comps = doc["components"]
        return cls(doc["sensor"], doc["target"], [c["weight"] for c in comps],
                   [c["mean"] for c in comps], [c["cov"] for c in comps], doc["baked_evidence"],
                   [tuple(c.get("source", ())) for c in comps] if any(c.get("source") for c in comps) else (),
                   doc.get("sources", ()), doc.get("network_hash", ""), doc.get("evidence_hash", ""))

    @classmethod
    def from_json(cls, text: str) -> "CompiledModel":
        return cls.from_dict(json.loads(text))


def compile_model(net: Network, slow_evidence: Evidence, sensor: str, target: str, *,
                  max_configs: int = DEFAULT_MAX_CONFIGS, method: str = "branch") -> CompiledModel:
    """Reduce the network to the runtime (sensor, target) mixture.

    Every other unobserved continuous node (e.g. the masking-agent density)
    is integrated out exactly.
    """
    if sensor == target:
        raise ArgumentError("sensor and target must differ")
    joint = exact_joint_mixture(net, [sensor, target], slow_evidence,
                                max_configs=max_configs, method=method)
    return CompiledModel(sensor, target, joint.weights, joint.means, joint.covs,
                         slow_evidence.to_dict(net), joint.labels, joint.sources,
                         net.content_hash(), slow_evidence.content_hash())


def check_fresh(cm: CompiledModel, net: Network, slow_evidence: Evidence) -> None:
    """Raise :class:`StaleModelError` if ``cm`` was built from something else."""
    if cm.network_hash != net.content_hash():
        raise StaleModelError("compiled model was built from a different network")
    if cm.evidence_hash != slow_evidence.content_hash():
        raise StaleModelError("compiled model was built from different slow evidence")


def _component_log_lik(cm: CompiledModel, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)[..., None]
    return cm._log_norm - 0.5 * (s - cm._mu_s) ** 2 / cm._var_s


def sensor_posterior(cm: CompiledModel, s: float) -> GaussianMixture:
    """Posterior mixture of the target after reading ``s`` on the sensor."""
    with np.errstate(over="ignore"):
        lw = cm._log_norm - 0.5 * (s - cm._mu_s) ** 2 / cm._var_s
    top = lw.max()
    if not np.isfinite(top):
        logger.warning("sensor likelihood underflow at s=%r; using the most likely component", s)
        k = int(np.argmax(cm._log_w))
        w = np.zeros(len(cm))
        w[k] = 1.0
    else:
        w = np.exp(lw - top)
        w /= w.sum()
    keep = w > 0
    means = cm._mu_t + cm._slope * (s - cm._mu_s)
    labels = [l for l, k in zip(cm.labels, keep) if k] if cm.labels else ()
    if keep.all():
        return GaussianMixture(w, means, cm._cond_var, labels, cm.sources, cm.target, check=False)
    w = w[keep]
    return GaussianMixture(w / w.sum(), means[keep], cm._cond_var[keep], labels, cm.sources,
                           cm.target, check=False)


def tail_curve(cm: CompiledModel, s, c_hat: float) -> np.ndarray:
    """P(target > c_hat | sensor = s), vectorized over ``s``."""
    lw = _component_log_lik(cm, s)
    w = np.exp(lw - lw.max(axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    s = np.asarray(s, dtype=float)[..., None]
    z = (c_hat - (cm._mu_t + cm._slope * (s - cm._mu_s))) / cm._cond_sd
    return np.clip(np.sum(w * survival(z), axis=-1), 0.0, 1.0)


@dataclass(frozen=True)
class DivertRule:
    """Closed sensor intervals on which diverting is optimal.

    Endpoints may be infinite: an interval that reaches the edge of the
    scanned range extends the edge decision to the whole half line.
    """

    intervals: tuple[tuple[float, float], ...]
    policy: Policy
    tolerance: float = BOUNDARY_TOLERANCE
    scan_range: tuple[float, float] = (-math.inf, math.inf)
    grid_points: int = DEFAULT_GRID_POINTS
    _lows: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _highs: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        for (a, b), nxt in zip(iv, iv[1:] + ((math.inf, math.inf),)):
            if not a <= b or b >= nxt[0] and nxt[0] != math.inf:
                raise ArgumentError("intervals must be sorted, disjoint and non-empty")
        object.__setattr__(self, "intervals", iv)
        object.__setattr__(self, "_lows", tuple(a for a, _ in iv))
        object.__setattr__(self, "_highs", tuple(b for _, b in iv))

    def __len__(self) -> int:
        return len(self.intervals)

    def endpoints(self) -> np.ndarray:
        return np.array([e for iv in self.intervals for e in iv if math.isfinite(e)])

    def to_dict(self) -> dict:
        def enc(x):
            return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")
        return {
            "kind": "divert_rule",
            "schema_version": 1,
            "policy": self.policy.to_dict(),
            "tolerance": self.tolerance,
            "grid_points": self.grid_points,
            "scan_range": [enc(x) for x in self.scan_range],
            "intervals": [[enc(a), enc(b)] for a, b in self.intervals],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "DivertRule":
        if doc.get("kind") != "divert_rule":
            raise ArgumentError("not a divert rule document")
        return cls(tuple((float(a), float(b)) for a, b in doc["intervals"]), Policy.from_dict(doc["policy"]),
                   float(doc["tolerance"]), tuple(float(x) for x in doc["scan_range"]),
                   int(doc["grid_points"]))

    @classmethod
    def from_json(cls, text: str) -> "DivertRule":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """PLC export: one ``lower,upper`` row per interval."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lower", "upper"])
        for a, b in self.intervals:
            w.writerow([_fmt(a), _fmt(b)])
        return buf.getvalue()


def compile_rule(cm: CompiledModel, policy: Policy, *, grid_points: int = DEFAULT_GRID_POINTS,
                 tolerance: float = BOUNDARY_TOLERANCE) -> DivertRule:
    """Sensor intervals where P(target > c_hat | s) exceeds the loss ratio.

    A uniform grid over the scan range locates sign changes of the decision
    margin, and each change is bisected down to ``tolerance``. Divert
    islands narrower than the grid spacing can be missed; the grid density
    is the resolution limit.
    """
    lo, hi = cm.scan_range()
    thr = policy.threshold
    if thr >= 1.0:
        return DivertRule((), policy, tolerance, (lo, hi), grid_points)
    grid = np.linspace(lo, hi, grid_points)
    inside = tail_curve(cm, grid, policy.c_hat) > thr

    def divert(s: float) -> bool:
        return bool(tail_curve(cm, s, policy.c_hat) > thr)

    def boundary(a: float, b: float, a_inside: bool) -> float:
        # invariant: divert(a) == a_inside != divert(b)
        while b - a > tolerance:
            mid = 0.5 * (a + b)
            if divert(mid) == a_inside:
                a = mid
            else:
                b = mid
        return a if a_inside else b

    intervals = []
    start = -math.inf if inside[0] else None
    for i in range(grid_points - 1):
        if inside[i] == inside[i + 1]:
            continue
        if inside[i + 1]:
            start = boundary(grid[i], grid[i + 1], False)
        else:
            end = boundary(grid[i], grid[i + 1], True)
            intervals.append((start, end))
            start = None
    if start is not None:
        intervals.append((start, math.inf))
    merged: list[tuple[float, float]] = []
    for a, b in intervals:
        if merged and a - merged[-1][1] <= tolerance:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return DivertRule(tuple(merged), policy, tolerance, (lo, hi), grid_points)


def rule_decide(rule: DivertRule, s: float) -> Action:
    """Interval membership by binary search."""
    if not rule.scan_range[0] <= s <= rule.scan_range[1]:
        logger.debug("sensor reading %r outside scanned range %r", s, rule.scan_range)
    i = bisect.bisect_right(rule._lows, s) - 1
    if i >= 0 and s <= rule._highs[i]:
        return Action.DIVERT
    return Action.ACCEPT


compile = compile_model
