"""How much is lost by replacing the exact posterior with one Gaussian."""

import numpy as np

from cgcontrol import ellipse_params, exact_joint_mixture, exact_mixture, kl_mixture_to_gaussian, moment_match
from cgcontrol.fixture import reference_evidence, reference_network
from cgcontrol.model import Evidence

net = reference_network()
z = reference_evidence()

joint = exact_joint_mixture(net, ["SS", "SCD"], z)
mm = moment_match(joint)
print(f"KL(joint mixture || moment-matched Gaussian) = {kl_mixture_to_gaussian(joint, mm):.4f} nats")

e = ellipse_params(mm.mean, mm.cov)
print(f"approximation ellipse: centre {np.round(e.center, 3)}, angle {e.angle:+.3f} rad")
top = np.argsort(joint.weights)[::-1][:3]
for k in top:
    ek = ellipse_params(joint.means[k], joint.covs[k])
    print(f"component {joint.labels[k]} weight {joint.weights[k]:.3f}, angle {ek.angle:+.3f} rad")

print("\n  SS   KL(p(SCD|SS) || Gaussian)")
for s in (3.0, 5.0, 7.0, 9.0, 11.0):
    m = exact_mixture(net, "SCD", z.merge(Evidence({}, {"SS": s})))
    print(f"{s:5.1f}  {kl_mixture_to_gaussian(m, moment_match(m)):.4f}")
