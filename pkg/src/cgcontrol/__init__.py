"""Exact inference and real-time decision compilation for CG Bayesian networks."""

from .compiler import (CompiledModel, DivertRule, Policy, compile_model, compile_rule, rule_decide,
                       sensor_posterior, tail_curve)
from .decision import Action, decide, expected_loss, tail_prob
from .errors import (ArgumentError, CapacityError, CGError, DomainError, InconsistentEvidenceError,
                     NumericalError, SchemaError, StaleModelError, StructuralError,
                     UndefinedDivisionError)
from .inference import (CalibratedTree, CliqueTree, branch_repropagate, build_clique_tree,
                        node_marginal, propagate)
from .mixture import (GaussianMixture, JointGaussianMixture, ellipse_params, exact_joint_mixture,
                      exact_mixture, kl_mixture_to_gaussian, moment_match)
from .model import (ContinuousNode, DiscreteNode, Evidence, Network, load_evidence, load_network,
                    topo_sort, validate)
from .potential import CGPotential

__version__ = "0.1.0"
