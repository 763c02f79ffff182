"""Seeded simulation of the sorting line.

A batch (one soil box) draws its batch-level state once by ancestral
sampling: every discrete node, the pit-section contamination and the batch
assay. The per-sample nodes (sample contamination, masking agent, sensor)
are then drawn i.i.d. given that state. Controllers see only the sensor
reading and the batch assay, except the oracle, which sees the truth.

Random numbers come from numpy's Philox counter-based generator keyed by
the batch seed, so ``(network, seed)`` replays every number exactly.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .compiler import CompiledModel, DivertRule, Policy, compile_model, compile_rule, rule_decide
from .decision import Action
from .errors import ArgumentError, StaleModelError
from .model import ContinuousNode, Evidence, Network, topo_sort

__all__ = [
    "BatchGroundTruth",
    "BayesianController",
    "ComparisonReport",
    "LineConfig",
    "NaiveThresholdController",
    "OracleController",
    "RunMetrics",
    "best_naive_threshold",
    "compare_controllers",
    "make_rng",
    "run_batch",
    "stage_batch",
]

PRNG_ALGORITHM = "Philox"
DEFAULT_SAMPLES = 1000


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


@dataclass(frozen=True)
class LineConfig:
    """Which nodes are per-sample, which are observed at staging time."""

    sensor: str = "SS"
    target: str = "SCD"
    slow_nodes: tuple[str, ...] = ("ACD",)
    sample_nodes: tuple[str, ...] = ("SCD", "SMD", "SS")
    n_samples: int = DEFAULT_SAMPLES

    def __post_init__(self):
        object.__setattr__(self, "slow_nodes", tuple(self.slow_nodes))
        object.__setattr__(self, "sample_nodes", tuple(self.sample_nodes))
        if self.n_samples < 1:
            raise ArgumentError("n_samples must be positive")
        if self.sensor not in self.sample_nodes or self.target not in self.sample_nodes:
            raise ArgumentError("sensor and target must be per-sample nodes")
        if set(self.slow_nodes) & set(self.sample_nodes):
            raise ArgumentError("slow evidence nodes must be batch-level")

    def check(self, net: Network) -> None:
        for label in self.slow_nodes + self.sample_nodes:
            net.node(label)
        per_sample = set(self.sample_nodes)
        for label in net.labels:
            if label not in per_sample and any(p in per_sample for p in net.parents(label)):
                raise ArgumentError(f"batch-level node {label!r} has a per-sample parent")

    def to_dict(self) -> dict:
        return {"sensor": self.sensor, "target": self.target, "slow_nodes": list(self.slow_nodes),
                "sample_nodes": list(self.sample_nodes), "n_samples": self.n_samples}


@dataclass(frozen=True, eq=False)
class BatchGroundTruth:
    """Everything drawn for one batch.

    ``batch`` holds batch-level values (state indices for discrete nodes),
    ``samples`` the per-sample arrays; ``evidence`` is what staging sees.
    """

    seed: int
    network_hash: str
    line: LineConfig
    batch: Mapping[str, float]
    samples: Mapping[str, np.ndarray]
    evidence: Evidence

    @property
    def n_samples(self) -> int:
        return self.line.n_samples

    @property
    def sensor(self) -> np.ndarray:
        return self.samples[self.line.sensor]

    @property
    def truth(self) -> np.ndarray:
        return self.samples[self.line.target]


def _draw_discrete(rng, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])
    idx = np.sum(u[..., None] >= cdf[..., :-1] / cdf[..., -1:], axis=-1)
    return idx.astype(np.int64)


def stage_batch(net: Network, seed: int, line: LineConfig | None = None) -> tuple[BatchGroundTruth, Evidence]:
    """Draw one batch and the staging-time (slow) evidence it produces."""
    line = line or LineConfig()
    line.check(net)
    rng = make_rng(seed)
    n = line.n_samples
    per_sample = set(line.sample_nodes)
    values: dict[str, np.ndarray] = {}
    for label in topo_sort(net):
        node = net.node(label)
        shape = (n,) if label in per_sample else ()
        if isinstance(node, ContinuousNode):
            cfg = tuple(np.broadcast_to(values[p], shape) for p in node.discrete_parents)
            mean = node.intercept[cfg] if cfg else np.broadcast_to(node.intercept, shape)
            coef = node.coefficients[cfg] if cfg else np.broadcast_to(node.coefficients,
                                                                       shape + node.coefficients.shape)
            for j, p in enumerate(node.continuous_parents):
                mean = mean + coef[..., j] * values[p]
            var = node.variance[cfg] if cfg else node.variance
            values[label] = mean + np.sqrt(var) * rng.standard_normal(shape)
        else:
            cfg = tuple(np.broadcast_to(values[p], shape) for p in node.parents)
            probs = node.cpt[cfg] if cfg else np.broadcast_to(node.cpt, shape + node.cpt.shape)
            values[label] = _draw_discrete(rng, probs)

    batch = {}
    for k, v in values.items():
        if k in per_sample:
            continue
        batch[k] = int(v) if net.is_discrete(k) else float(v)
    samples = {k: np.asarray(values[k], dtype=float if not net.is_discrete(k) else np.int64)
               for k in line.sample_nodes}
    for arr in samples.values():
        arr.setflags(write=False)
    ev = Evidence({k: batch[k] for k in line.slow_nodes if net.is_discrete(k)},
                  {k: batch[k] for k in line.slow_nodes if not net.is_discrete(k)})
    gt = BatchGroundTruth(int(seed), net.content_hash(), line, batch, samples, ev)
    return gt, ev


class Controller(Protocol):
    name: str

    def decisions(self, gt: BatchGroundTruth) -> tuple[np.ndarray, np.ndarray]:
        """Boolean divert mask and per-decision latencies in nanoseconds."""


def _timed(fn, xs) -> tuple[np.ndarray, np.ndarray]:
    out = np.zeros(len(xs), dtype=bool)
    lat = np.zeros(len(xs), dtype=np.int64)
    clock = time.perf_counter_ns
    for i, x in enumerate(xs.tolist()):
        t0 = clock()
        a = fn(x)
        lat[i] = clock() - t0
        out[i] = a is Action.DIVERT
    return out, lat


@dataclass(frozen=True)
class BayesianController:
    """Runtime controller: precompiled divert intervals on the sensor axis."""

    model: CompiledModel
    rule: DivertRule
    name: str = "bayesian"

    @classmethod
    def stage(cls, net: Network, evidence: Evidence, policy: Policy, line: LineConfig | None = None,
              **compile_kw) -> "BayesianController":
        line = line or LineConfig()
        cm = compile_model(net, evidence, line.sensor, line.target, **compile_kw)
        return cls(cm, compile_rule(cm, policy))

    def decisions(self, gt: BatchGroundTruth):
        if self.model.network_hash != gt.network_hash or \
                self.model.evidence_hash != gt.evidence.content_hash():
            raise StaleModelError(f"compiled model does not match batch seed={gt.seed}")
        rule = self.rule
        return _timed(lambda s: rule_decide(rule, s), gt.sensor)


@dataclass(frozen=True)
class NaiveThresholdController:
    """Divert iff the raw sensor reading exceeds ``t``."""

    t: float
    name: str = "naive"

    def decisions(self, gt: BatchGroundTruth):
        t = self.t
        return _timed(lambda s: Action.DIVERT if s > t else Action.ACCEPT, gt.sensor)


@dataclass(frozen=True)
class OracleController:
    """Divert iff the true contamination exceeds ``c_hat`` (ground truth)."""

    c_hat: float
    name: str = "oracle"

    def decisions(self, gt: BatchGroundTruth):
        c_hat = self.c_hat
        return _timed(lambda c: Action.DIVERT if c > c_hat else Action.ACCEPT, gt.truth)


@dataclass(frozen=True)
class RunMetrics:
    """Realized outcome of one controller on one batch.

    ``violation_rate`` is the fraction of all samples that were accepted
    while truly above ``c_hat``. Latencies are in nanoseconds.
    """

    controller: str
    seed: int
    n_samples: int
    n_diverted: int
    n_violations: int
    slag_fraction: float
    violation_rate: float
    realized_loss: float
    regret: float = math.nan
    latency_mean_ns: float = math.nan
    latency_p50_ns: float = math.nan
    latency_p99_ns: float = math.nan
    latency_max_ns: float = math.nan
    decisions: np.ndarray | None = field(default=None, repr=False, compare=False)

    CSV_FIELDS = ("controller", "seed", "n_samples", "n_diverted", "n_violations", "slag_fraction",
                  "violation_rate", "realized_loss", "regret")
    TIMING_FIELDS = ("controller", "seed", "latency_mean_ns", "latency_p50_ns", "latency_p99_ns",
                     "latency_max_ns")

    def row(self, fields=CSV_FIELDS) -> list[str]:
        return [_fmt(getattr(self, f)) for f in fields]


def realized_loss(divert: np.ndarray, truth: np.ndarray, policy: Policy) -> tuple[float, int]:
    """Total loss and violation count of a divert mask against the truth."""
    violations = int(np.count_nonzero(~divert & (truth > policy.c_hat)))
    return float(np.count_nonzero(divert)) * policy.divert_cost + violations * policy.error_cost, violations


def run_batch(gt: BatchGroundTruth, controller: Controller, policy: Policy) -> RunMetrics:
    divert, lat = controller.decisions(gt)
    loss, viol = realized_loss(divert, gt.truth, policy)
    n = gt.n_samples
    lat_f = lat.astype(float)
    return RunMetrics(controller.name, gt.seed, n, int(divert.sum()), viol, float(divert.sum()) / n,
                      viol / n, loss, math.nan, float(lat_f.mean()), float(np.percentile(lat_f, 50)),
                      float(np.percentile(lat_f, 99)), float(lat_f.max()), divert)


def best_naive_threshold(batches: Sequence[BatchGroundTruth], policy: Policy) -> float:
    """Raw-sensor threshold with the lowest total realized loss (hindsight sweep).

    The loss only changes at observed readings, so every midpoint between
    consecutive distinct readings (plus both ends) is tried; ties go to the
    lowest threshold.
    """
    s = np.concatenate([b.sensor for b in batches])
    bad = np.concatenate([b.truth for b in batches]) > policy.c_hat
    order = np.argsort(s, kind="stable")
    s, bad = s[order], bad[order]
    n = len(s)
    # candidate k: accept the k smallest readings, divert the rest
    accepted_bad = np.concatenate([[0], np.cumsum(bad)])
    loss = (n - np.arange(n + 1)) * policy.divert_cost + accepted_bad * policy.error_cost
    # only cut between distinct values
    valid = np.ones(n + 1, dtype=bool)
    valid[1:n] = s[1:] > s[:-1]
    loss = np.where(valid, loss, np.inf)
    k = int(np.argmin(loss))
    if k == 0:
        return -math.inf
    if k == n:
        return math.inf
    return float(0.5 * (s[k - 1] + s[k]))


@dataclass
class ComparisonReport:
    """Per-batch metrics for every controller on identical ground truth."""

    policy: Policy
    line: LineConfig
    naive_threshold: float
    metrics: list[RunMetrics]
    batches: list[BatchGroundTruth] = field(repr=False)

    def totals(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for m in self.metrics:
            out[m.controller] = out.get(m.controller, 0.0) + m.realized_loss
        return out

    def summary(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for name in dict.fromkeys(m.controller for m in self.metrics):
            ms = [m for m in self.metrics if m.controller == name]
            n = sum(m.n_samples for m in ms)
            out[name] = {
                "total_loss": sum(m.realized_loss for m in ms),
                "mean_regret": float(np.mean([m.regret for m in ms])),
                "slag_fraction": sum(m.n_diverted for m in ms) / n,
                "violation_rate": sum(m.n_violations for m in ms) / n,
            }
        return out

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RunMetrics.CSV_FIELDS)
        for m in self.metrics:
            w.writerow(m.row())
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RunMetrics.TIMING_FIELDS)
        for m in self.metrics:
            w.writerow(m.row(RunMetrics.TIMING_FIELDS))
        return buf.getvalue()

    def trace_csv(self) -> str:
        names = list(dict.fromkeys(m.controller for m in self.metrics))
        by_key = {(m.controller, m.seed): m for m in self.metrics}
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "sample", "sensor", "truth"] + [f"{n}_action" for n in names])
        for gt in self.batches:
            acts = [by_key[(n, gt.seed)].decisions for n in names]
            for i, (s, c) in enumerate(zip(gt.sensor.tolist(), gt.truth.tolist())):
                w.writerow([gt.seed, i, _fmt(s), _fmt(c)] +
                           [Action.DIVERT.value if a[i] else Action.ACCEPT.value for a in acts])
        return buf.getvalue()


def compare_controllers(net: Network, policy: Policy, seeds: Iterable[int], *,
                        line: LineConfig | None = None,
                        controllers: Sequence[str] = ("oracle", "bayesian", "naive"),
                        naive_threshold: float | None = None, **compile_kw) -> ComparisonReport:
    """Run every controller on the same staged batches.

    The naive threshold, unless given, is the hindsight-best one over all
    batches, which favours the baseline.
    """
    line = line or LineConfig()
    unknown = set(controllers) - {"oracle", "bayesian", "naive"}
    if unknown:
        raise ArgumentError(f"unknown controllers: {sorted(unknown)}")
    batches = [stage_batch(net, s, line)[0] for s in seeds]
    if naive_threshold is None:
        naive_threshold = best_naive_threshold(batches, policy)
    staged: dict[str, BayesianController] = {}
    metrics: list[RunMetrics] = []
    for gt in batches:
        oracle = run_batch(gt, OracleController(policy.c_hat), policy)
        for name in controllers:
            if name == "oracle":
                m = oracle
            elif name == "naive":
                m = run_batch(gt, NaiveThresholdController(naive_threshold), policy)
            else:
                key = gt.evidence.content_hash()
                if key not in staged:
                    staged[key] = BayesianController.stage(net, gt.evidence, policy, line, **compile_kw)
                m = run_batch(gt, staged[key], policy)
            metrics.append(replace(m, regret=m.realized_loss - oracle.realized_loss))
    return ComparisonReport(policy, line, naive_threshold, metrics, batches)
