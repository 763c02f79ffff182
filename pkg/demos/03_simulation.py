"""Compare the oracle, the compiled Bayesian controller and the best fixed
threshold on 20 simulated batches of 1000 samples."""

from cgcontrol.fixture import REFERENCE_POLICY, reference_network
from cgcontrol.simulator import LineConfig, compare_controllers

report = compare_controllers(reference_network(), REFERENCE_POLICY, range(20),
                             line=LineConfig(n_samples=1000))
print(f"best naive threshold (chosen with hindsight): {report.naive_threshold:.4f}")
for name, total in sorted(report.totals().items(), key=lambda kv: kv[1]):
    print(f"{name:10s} total loss {total:10.1f}")
print()
print(report.metrics_csv().splitlines()[0])
for line in report.metrics_csv().splitlines()[1:7]:
    print(line)
