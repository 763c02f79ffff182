"""Random CG networks and model-consistent evidence for property tests."""

from __future__ import annotations

import numpy as np

from .model import ContinuousNode, DiscreteNode, Evidence, Network, topo_sort


def random_network(rng: np.random.Generator, *, max_discrete: int = 6, max_states: int = 3,
                   max_continuous: int = 6, max_parents: int = 2, min_discrete: int = 0,
                   min_continuous: int = 1, name: str = "random") -> Network:
    """Random CG network; discrete nodes only ever get discrete parents."""
    n_d = int(rng.integers(min_discrete, max_discrete + 1))
    n_c = int(rng.integers(min_continuous, max_continuous + 1))
    nodes = []
    d_labels: list[str] = []
    cards: dict[str, int] = {}
    for i in range(n_d):
        label = f"D{i}"
        card = int(rng.integers(2, max_states + 1))
        k = int(rng.integers(0, min(max_parents, i) + 1))
        parents = sorted(rng.choice(d_labels, size=k, replace=False).tolist()) if k else []
        shape = tuple(cards[p] for p in parents) + (card,)
        cpt = rng.dirichlet(np.ones(card), size=shape[:-1]) if parents else rng.dirichlet(np.ones(card))
        nodes.append(DiscreteNode(label, [f"s{j}" for j in range(card)], cpt.reshape(shape), parents))
        d_labels.append(label)
        cards[label] = card
    c_labels: list[str] = []
    for i in range(n_c):
        label = f"X{i}"
        kd = int(rng.integers(0, min(max_parents, n_d) + 1))
        kc = int(rng.integers(0, min(max_parents, i) + 1))
        dparents = sorted(rng.choice(d_labels, size=kd, replace=False).tolist()) if kd else []
        cparents = sorted(rng.choice(c_labels, size=kc, replace=False).tolist()) if kc else []
        shape = tuple(cards[p] for p in dparents)
        intercept = rng.normal(0.0, 2.0, size=shape)
        variance = rng.uniform(0.2, 2.0, size=shape)
        coef = rng.uniform(0.3, 1.5, size=shape + (kc,)) * rng.choice([-1.0, 1.0], size=shape + (kc,))
        nodes.append(ContinuousNode(label, intercept, variance, dparents, cparents, coef))
        c_labels.append(label)
    return Network(nodes, name=name)


def sample_joint(net: Network, rng: np.random.Generator) -> dict[str, float]:
    """One ancestral draw of every node (state indices for discrete nodes)."""
    values: dict[str, float] = {}
    for label in topo_sort(net):
        node = net.node(label)
        if node.kind == "discrete":
            p = node.cpt[tuple(values[q] for q in node.parents)]
            values[label] = int(rng.choice(len(p), p=p / p.sum()))
        else:
            cfg = tuple(values[q] for q in node.discrete_parents)
            mean = float(node.intercept[cfg])
            for j, q in enumerate(node.continuous_parents):
                mean += float(node.coefficients[cfg][j]) * values[q]
            values[label] = mean + float(np.sqrt(node.variance[cfg])) * rng.standard_normal()
    return values


def random_evidence(net: Network, rng: np.random.Generator, p_observe: float = 0.35,
                    keep: tuple[str, ...] = ()) -> Evidence:
    """Observe a random subset of one joint draw, so the evidence has
    positive density; nodes in ``keep`` stay unobserved."""
    draw = sample_joint(net, rng)
    disc, cont = {}, {}
    for label in net.labels:
        if label in keep or rng.random() >= p_observe:
            continue
        if net.is_discrete(label):
            disc[label] = int(draw[label])
        else:
            cont[label] = float(draw[label])
    return Evidence(disc, cont)
