"""Posterior of sample contamination given the sensor, on the reference network.

Inside every waste type a higher gamma reading means more TRU, yet across
waste types the relationship flips. The exact mixture keeps both facts; the
single moment-matched Gaussian keeps only the second.
"""

import numpy as np

from cgcontrol import exact_joint_mixture, exact_mixture, moment_match
from cgcontrol.fixture import reference_evidence, reference_network
from cgcontrol.model import Evidence

net = reference_network()
z = reference_evidence()

joint = exact_joint_mixture(net, ["SS", "SCD"], z)
corr = joint.correlations()
mm = moment_match(joint)
print(f"{len(joint)} components over (SS, SCD)")
print(f"component correlations: min {corr.min():.3f}, max {corr.max():.3f}")
print(f"moment-matched correlation: {mm.cov[0, 1] / np.sqrt(mm.cov[0, 0] * mm.cov[1, 1]):.3f}")

print("\n  SS    E[SCD|SS]   sd")
for s in np.arange(2.0, 12.1, 1.0):
    m = exact_mixture(net, "SCD", z.merge(Evidence({}, {"SS": float(s)})))
    print(f"{s:5.1f}  {m.mean():9.3f}  {np.sqrt(m.variance()):6.3f}")
