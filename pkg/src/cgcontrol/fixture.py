"""Reference soil-sorting network.

Topology::

    WC -> {CT, PF, HL, CR, OR, PY, SZ}         waste characteristics
    CT, CR -> L    PF, OR, SZ -> M    HL, PY -> F   container condition
    L, M, F -> LK                               pit-section soil contamination
    LK -> ACD -> AMD                            batch assay
    WC, LK -> SCD -> SMD -> SS  (WC -> SMD)     sample, masking agent, sensor

All continuous quantities are natural-log densities. Waste type ``wt-0``
carries very little TRU but a large amount of gamma-emitting masking
agent, so a high gamma reading points at a *clean* sample even though
contamination and reading are positively related inside every waste type.
The parameter values are invented; they are chosen to make that inversion
visible, not fitted to any site.
"""

from __future__ import annotations

import numpy as np

from .compiler import Policy
from .model import ContinuousNode, DiscreteNode, Evidence, Network

WASTE_PRIOR = (0.35, 0.15, 0.15, 0.20, 0.15)
# log TRU density of a sample relative to the pit-section level
TRU_OFFSET = (-36.0, -1.5, -0.5, 0.5, 1.5)
# log ratio of masking-agent (gamma) density to TRU density
GAMMA_RATIO = (44.0, 6.0, 5.5, 4.5, 3.5)
SAMPLE_VARIANCE = (3.0, 3.0, 2.5, 2.5, 3.0)

# characteristic -> (states, P(state | wt-k) rows for k = 0..4)
CHARACTERISTICS = {
    "CT": (("drum", "box", "bag"), ((0.6, 0.3, 0.1), (0.3, 0.5, 0.2), (0.2, 0.3, 0.5),
                                    (0.5, 0.4, 0.1), (0.1, 0.3, 0.6))),
    "PF": (("sludge", "solid"), ((0.7, 0.3), (0.4, 0.6), (0.2, 0.8), (0.5, 0.5), (0.3, 0.7))),
    "HL": (("short", "long"), ((0.9, 0.1), (0.2, 0.8), (0.1, 0.9), (0.15, 0.85), (0.05, 0.95))),
    "CR": (("low", "high"), ((0.5, 0.5), (0.7, 0.3), (0.4, 0.6), (0.8, 0.2), (0.6, 0.4))),
    "OR": (("low", "high"), ((0.3, 0.7), (0.6, 0.4), (0.8, 0.2), (0.5, 0.5), (0.7, 0.3))),
    "PY": (("no", "yes"), ((0.9, 0.1), (0.8, 0.2), (0.95, 0.05), (0.7, 0.3), (0.85, 0.15))),
    "SZ": (("fine", "coarse"), ((0.6, 0.4), (0.5, 0.5), (0.3, 0.7), (0.4, 0.6), (0.55, 0.45))),
}

REFERENCE_ASSAY = 0.5
REFERENCE_POLICY = Policy(c_hat=0.0, divert_cost=1.0, error_cost=5.0)


def _normalized(rows):
    rows = np.asarray(rows, dtype=float)
    return rows / rows.sum(axis=-1, keepdims=True)


def reference_network(n_waste_types: int = 5) -> Network:
    """Build the reference network with 3 to 5 waste types.

    Fewer waste types keep the first ``n_waste_types`` of every table and
    renormalize.
    """
    if not 3 <= n_waste_types <= 5:
        raise ValueError("n_waste_types must be between 3 and 5")
    k = n_waste_types
    waste = [f"wt-{i}" for i in range(k)]
    nodes = [DiscreteNode("WC", waste, _normalized(WASTE_PRIOR[:k]))]
    for name, (states, rows) in CHARACTERISTICS.items():
        nodes.append(DiscreteNode(name, states, _normalized(rows[:k]), ["WC"]))

    # P(L = breached | CT, CR)
    leak = np.array([[0.2, 0.45], [0.35, 0.6], [0.6, 0.85]])
    nodes.append(DiscreteNode("L", ["intact", "breached"],
                              np.stack([1 - leak, leak], axis=-1), ["CT", "CR"]))
    # P(M = high | PF, OR, SZ)
    mob = np.array([[[0.7, 0.5], [0.85, 0.65]], [[0.25, 0.15], [0.45, 0.3]]])
    nodes.append(DiscreteNode("M", ["low", "high"], np.stack([1 - mob, mob], axis=-1),
                              ["PF", "OR", "SZ"]))
    # P(F = dispersed | HL, PY)
    frac = np.array([[0.3, 0.6], [0.15, 0.45]])
    nodes.append(DiscreteNode("F", ["contained", "dispersed"], np.stack([1 - frac, frac], axis=-1),
                              ["HL", "PY"]))

    lm = np.array([-1.2, 0.6])[:, None, None] + np.array([-0.5, 0.7])[None, :, None] \
        + np.array([-0.3, 0.5])[None, None, :]
    nodes.append(ContinuousNode("LK", lm, np.full((2, 2, 2), 0.6), ["L", "M", "F"]))
    nodes.append(ContinuousNode("ACD", 0.0, 0.3, [], ["LK"], [1.0]))
    nodes.append(ContinuousNode("AMD", 0.0, 0.2, [], ["ACD"], [1.0]))
    nodes.append(ContinuousNode("SCD", np.array(TRU_OFFSET[:k]), np.array(SAMPLE_VARIANCE[:k]),
                                ["WC"], ["LK"], np.ones((k, 1))))
    nodes.append(ContinuousNode("SMD", np.array(GAMMA_RATIO[:k]), np.full(k, 0.5),
                                ["WC"], ["SCD"], np.ones((k, 1))))
    nodes.append(ContinuousNode("SS", 0.0, 0.3, [], ["SMD"], [1.0]))
    return Network(nodes, name=f"soil-sorter-{k}wt")


def reference_evidence(assay: float = REFERENCE_ASSAY) -> Evidence:
    """Slow (batch-staging) evidence: the batch assay reading."""
    return Evidence({}, {"ACD": assay})
