"""Command-line entry point: validate, infer, compile, simulate, report.

Configuration is a JSON document (``--config``); relative paths inside it
resolve against the config file's directory. Per-command flags override
config entries. Exit status: 0 success, 1 domain failure, 2 I/O or usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .compiler import CompiledModel, Policy, compile_model, compile_rule, tail_curve
from .decision import Action
from .errors import CGError, SchemaError
from .inference import build_clique_tree, node_marginal, propagate
from .mixture import DEFAULT_MAX_CONFIGS, ellipse_params, exact_mixture, moment_match
from .model import Evidence, Network, load_evidence, load_network, validate
from .simulator import LineConfig, compare_controllers

log = logging.getLogger("cgcontrol")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2
DEFAULT_POLICY = {"c_hat": 0.0, "divert_cost": 1.0, "error_cost": 5.0}


class UsageError(Exception):
    """Bad or missing configuration; maps to exit status 2."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class RunConfig:
    """Merged view of the JSON config and command-line overrides."""

    def __init__(self, doc: dict, base: Path, args: argparse.Namespace):
        self.doc = doc
        self.base = base
        self.args = args

    @classmethod
    def load(cls, args: argparse.Namespace) -> "RunConfig":
        if args.config is None:
            return cls({}, Path.cwd(), args)
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        return cls(doc, path.parent, args)

    def get(self, key: str, default: Any = None) -> Any:
        value = getattr(self.args, key, None)
        return value if value is not None else self.doc.get(key, default)

    def section(self, name: str) -> dict:
        sec = self.doc.get(name, {})
        if not isinstance(sec, dict):
            raise UsageError(f"config section {name!r} must be an object")
        return sec

    def path(self, key: str, required: bool = True) -> Path | None:
        cli_value = getattr(self.args, key, None)
        if cli_value is not None:
            return Path(cli_value)
        if key in self.doc:
            return self.base / self.doc[key]
        if required:
            raise UsageError(f"no {key} given (use --{key} or the {key!r} config entry)")
        return None

    @property
    def out(self) -> Path:
        if self.args.out is not None:
            return Path(self.args.out)
        return self.base / self.doc.get("out", "out")

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))

    def network(self) -> Network:
        return load_network(self.path("network"))

    def evidence(self, net: Network) -> Evidence:
        p = self.path("evidence", required=False)
        return load_evidence(net, p) if p is not None else Evidence()

    def policy(self) -> Policy:
        try:
            return Policy.from_dict({**DEFAULT_POLICY, **self.doc.get("policy", {})})
        except CGError as exc:
            raise UsageError(str(exc)) from None


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _emit(cfg: RunConfig, name: str, text: str) -> None:
    if cfg.args.out is None and "out" not in cfg.doc:
        sys.stdout.write(text)
    else:
        _write(cfg.out / name, text)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- commands ----------------------------------------------------------

def cmd_validate(cfg: RunConfig) -> int:
    net = cfg.network()
    problems = validate(net)
    for v in problems:
        print(v)
    if not problems:
        print(f"{net.name}: {len(net.labels)} nodes, no violations")
    return EXIT_DOMAIN if problems else EXIT_OK


def cmd_infer(cfg: RunConfig) -> int:
    net = cfg.network()
    _require_valid(net)
    ev = cfg.evidence(net)
    cal = propagate(build_clique_tree(net), ev)
    targets = cfg.args.targets or cfg.section("infer").get("targets") or net.labels
    doc: dict[str, Any] = {"network": net.name, "evidence": ev.to_dict(net),
                           "log_likelihood": cal.log_likelihood, "discrete": {}, "continuous": {}}
    max_configs = int(cfg.section("infer").get("max_configs", DEFAULT_MAX_CONFIGS))
    for label in targets:
        node = net.node(label)
        if node.kind == "discrete":
            p = node_marginal(cal, label)
            doc["discrete"][label] = {s: float(v) for s, v in zip(node.states, p)}
        elif label in ev:
            doc["continuous"][label] = {"observed": ev.continuous[label]}
        else:
            m = exact_mixture(net, label, ev, max_configs=max_configs)
            mm = moment_match(m)
            doc["continuous"][label] = {"mean": float(mm.mean[0]), "variance": float(mm.cov[0, 0]),
                                        "mixture": m.to_dict()}
    _emit(cfg, "infer.json", json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def _require_valid(net: Network) -> None:
    problems = validate(net)
    if problems:
        raise CGError("network failed validation:\n" + "\n".join(map(str, problems)))


def _line(cfg: RunConfig) -> tuple[str, str]:
    return str(cfg.get("sensor", "SS")), str(cfg.get("target", "SCD"))


def cmd_compile(cfg: RunConfig) -> int:
    net = cfg.network()
    _require_valid(net)
    ev = cfg.evidence(net)
    sensor, target = _line(cfg)
    sec = cfg.section("compile")
    cm = compile_model(net, ev, sensor, target,
                       max_configs=int(sec.get("max_configs", DEFAULT_MAX_CONFIGS)))
    rule = compile_rule(cm, cfg.policy(), grid_points=int(sec.get("grid_points", 4096)))
    out = cfg.out
    _write(out / "model.json", cm.to_json())
    _write(out / "rule.json", rule.to_json())
    _write(out / "rule.csv", rule.to_csv())
    print(f"{len(cm)} components over ({sensor}, {target})")
    for a, b in rule.intervals:
        print(f"divert on [{_fmt(a)}, {_fmt(b)}]")
    if not rule.intervals:
        print("divert set is empty")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    net = cfg.network()
    _require_valid(net)
    sec = cfg.section("simulate")
    sensor, target = _line(cfg)
    line = LineConfig(sensor, target, tuple(sec.get("slow_nodes", ("ACD",))),
                      tuple(sec.get("sample_nodes", ("SCD", "SMD", "SS"))),
                      int(sec.get("n_samples", 1000)))
    if "seeds" in sec and cfg.args.seed is None:
        seeds = [int(s) for s in sec["seeds"]]
    else:
        seeds = [cfg.seed + i for i in range(int(sec.get("n_batches", 20)))]
    controllers = tuple(sec.get("controllers", ("oracle", "bayesian", "naive")))
    report = compare_controllers(net, cfg.policy(), seeds, line=line, controllers=controllers,
                                 naive_threshold=sec.get("naive_threshold"))
    out = cfg.out
    _write(out / "metrics.csv", report.metrics_csv())
    _write(out / "trace.csv", report.trace_csv())
    _write(out / "timing.csv", report.timing_csv())
    summary = {"naive_threshold": report.naive_threshold, "seeds": seeds,
               "controllers": report.summary()}
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, s in summary["controllers"].items():
        print(f"{name:>9}: loss {s['total_loss']:.1f}  slag {s['slag_fraction']:.4f}  "
              f"violations {s['violation_rate']:.4f}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    model_path = cfg.path("model", required=False) or cfg.out / "model.json"
    try:
        cm = CompiledModel.from_json(model_path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read compiled model {model_path}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"{model_path}: not a compiled model ({exc})") from None
    sec = cfg.section("report")
    coverage = float(sec.get("coverage", 0.95))
    rows = []
    for w, m, c in zip(cm.weights, cm.means, cm.covs):
        e = ellipse_params(m, c, coverage)
        rows.append([_fmt(e.center[0]), _fmt(e.center[1]), _fmt(e.axes[0]), _fmt(e.axes[1]),
                     _fmt(e.angle), _fmt(w), "component"])
    mm = moment_match(cm.as_mixture())
    e = ellipse_params(mm.mean, mm.cov, coverage)
    rows.append([_fmt(e.center[0]), _fmt(e.center[1]), _fmt(e.axes[0]), _fmt(e.axes[1]),
                 _fmt(e.angle), _fmt(1.0), "approximation"])
    out = cfg.out
    _write(out / "ellipses.csv", _csv(["center_x", "center_y", "axis1", "axis2", "angle_rad", "weight",
                                       "kind"], rows))

    policy = cfg.policy()
    lo, hi = cm.scan_range()
    s = np.linspace(lo, hi, int(sec.get("points", 401)))
    tail = tail_curve(cm, s, policy.c_hat)
    thr = policy.threshold
    curve = [[_fmt(si), _fmt(ti), _fmt(thr), (Action.DIVERT if ti > thr else Action.ACCEPT).value]
             for si, ti in zip(s, tail)]
    _write(out / "decision_curve.csv", _csv(["s", "tail_prob", "threshold", "action"], curve))
    print(f"wrote {len(rows)} ellipse rows and {len(curve)} decision-curve rows to {out}")
    return EXIT_OK


COMMANDS = {
    "validate": (cmd_validate, "check a network for structural and parameter violations"),
    "infer": (cmd_infer, "posterior marginals and exact mixtures given evidence"),
    "compile": (cmd_compile, "compile the runtime model and divert rule"),
    "simulate": (cmd_simulate, "simulate batches and compare controllers"),
    "report": (cmd_report, "write ellipse and decision-curve plot data"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="cgcontrol", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--network", metavar="PATH")
        if name in ("infer", "compile"):
            p.add_argument("--evidence", metavar="PATH")
        if name in ("compile", "simulate", "report"):
            p.add_argument("--sensor")
            p.add_argument("--target")
        if name == "infer":
            p.add_argument("--targets", nargs="+", metavar="NODE")
        if name == "report":
            p.add_argument("--model", metavar="PATH")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, default in (("config", None), ("seed", None), ("out", None), ("verbose", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        return fn(RunConfig.load(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, SchemaError) as exc:
        msg = f"{exc.filename}: {exc.strerror}" if isinstance(exc, OSError) and exc.filename else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_IO
    except CGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
