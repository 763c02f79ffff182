"""Compile the runtime model and the divert rule, then time both paths."""

import time

import numpy as np

from cgcontrol import compile_model, compile_rule, decide, rule_decide, sensor_posterior
from cgcontrol.fixture import REFERENCE_POLICY, reference_evidence, reference_network

net = reference_network()
z = reference_evidence()

t0 = time.perf_counter()
cm = compile_model(net, z, "SS", "SCD")
rule = compile_rule(cm, REFERENCE_POLICY)
print(f"compiled {len(cm.weights)} components in {time.perf_counter() - t0:.2f} s")
print(f"scan range {cm.scan_range()}")
for lo, hi in rule.intervals:
    print(f"divert on [{lo:.6f}, {hi:.6f}]")

xs = np.random.default_rng(0).uniform(*cm.scan_range(), 5000)
agree = sum(rule_decide(rule, x) is decide(sensor_posterior(cm, x), REFERENCE_POLICY) for x in xs)
print(f"rule agrees with the full posterior decision on {agree}/{len(xs)} readings")

for name, fn in [("posterior + decide", lambda x: decide(sensor_posterior(cm, x), REFERENCE_POLICY)),
                 ("rule lookup", lambda x: rule_decide(rule, x))]:
    ns = np.empty(len(xs))
    for i, x in enumerate(xs):
        t = time.perf_counter_ns()
        fn(x)
        ns[i] = time.perf_counter_ns() - t
    print(f"{name:20s} p50 {np.percentile(ns, 50) / 1e3:7.2f} us  p99 {np.percentile(ns, 99) / 1e3:7.2f} us")
