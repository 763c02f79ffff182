"""Strong junction trees and CG belief propagation.

The tree is built by eliminating every continuous variable before any
discrete one (min-fill, ties by node index). Cliques point towards a
strong root, which guarantees that collect messages are exact and that
weak (moment-matched) marginalization only happens while distributing.
After :func:`propagate`, each clique holds the weak marginal of the
posterior: exact discrete marginals and exact conditional first and second
moments of the continuous variables given the clique's discrete ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, InconsistentEvidenceError, StructuralError
from .model import Evidence, Network, check_evidence, topo_sort
from .potential import (
    CGPotential,
    MomentSummary,
    divide,
    extend,
    marginalize,
    multiply,
    reduce_evidence,
    to_moments,
)


@dataclass(frozen=True)
class CliqueTree:
    """Strong junction tree over a network.

    ``parent[i]`` is the neighbour of clique ``i`` on the way to ``root``
    (``None`` for the root); ``separators[i]`` is the intersection of
    clique ``i`` with its parent.
    """

    net: Network
    cliques: tuple[tuple[str, ...], ...]
    parent: tuple[int | None, ...]
    separators: tuple[tuple[str, ...], ...]
    root: int
    assignment: Mapping[str, int]
    elimination_order: tuple[str, ...]
    query_sets: tuple[tuple[str, ...], ...] = ()
    children: tuple[tuple[int, ...], ...] = field(init=False)
    collect_order: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        kids: list[list[int]] = [[] for _ in self.cliques]
        for i, p in enumerate(self.parent):
            if p is not None:
                kids[p].append(i)
        object.__setattr__(self, "children", tuple(tuple(k) for k in kids))
        order: list[int] = []
        stack = [(self.root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            stack.append((node, True))
            for c in reversed(self.children[node]):
                stack.append((c, False))
        object.__setattr__(self, "collect_order", tuple(order))

    def __len__(self) -> int:
        return len(self.cliques)

    def edges(self) -> list[tuple[int, int]]:
        return [(i, p) for i, p in enumerate(self.parent) if p is not None]

    def cliques_containing(self, var: str) -> list[int]:
        return [i for i, c in enumerate(self.cliques) if var in c]

    def smallest_clique(self, variables: Iterable[str]) -> int:
        vs = set(variables)
        found = [i for i, c in enumerate(self.cliques) if vs <= set(c)]
        if not found:
            raise ArgumentError(f"no clique contains {sorted(vs)}")
        return min(found, key=lambda i: (len(self.cliques[i]), i))

    def path_to_root(self, i: int) -> list[int]:
        out = [i]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out

    def table_size(self, i: int) -> int:
        size = 1
        for v in self.cliques[i]:
            if self.net.is_discrete(v):
                size *= self.net.cardinality(v)
        return size

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "elimination_order": list(self.elimination_order),
            "cliques": [{"id": i, "variables": list(c), "table_size": self.table_size(i)}
                        for i, c in enumerate(self.cliques)],
            "separators": [{"child": i, "parent": p, "variables": list(self.separators[i])}
                           for i, p in self.edges()],
            "assignment": dict(self.assignment),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


# -- construction ----------------------------------------------------------

def moral_graph(net: Network, extra_edges: Iterable[tuple[str, str]] = ()) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {v: set() for v in net.labels}
    for node in net.nodes:
        fam = [node.name, *node.parents]
        for a in fam:
            for b in fam:
                if a != b:
                    adj[a].add(b)
    for a, b in extra_edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def _fill_in(adj: Mapping[str, set[str]], v: str) -> int:
    nb = list(adj[v])
    return sum(1 for i in range(len(nb)) for j in range(i + 1, len(nb)) if nb[j] not in adj[nb[i]])


def strong_elimination_order(net: Network, adj: Mapping[str, set[str]]):
    """Min-fill elimination, all continuous variables before discrete ones.

    Returns the order and the elimination clique of each step.
    """
    adj = {v: set(n) for v, n in adj.items()}
    remaining = set(adj)
    order: list[str] = []
    elim_cliques: list[frozenset[str]] = []
    while remaining:
        cont = [v for v in remaining if not net.is_discrete(v)]
        pool = cont or list(remaining)
        v = min(pool, key=lambda u: (_fill_in(adj, u), net.index(u)))
        nb = adj[v]
        elim_cliques.append(frozenset(nb | {v}))
        for a in nb:
            adj[a] |= nb - {a}
            adj[a].discard(v)
        del adj[v]
        remaining.discard(v)
        order.append(v)
    return order, elim_cliques


def build_clique_tree(net: Network, query_sets: Iterable[Sequence[str]] = ()) -> CliqueTree:
    """Moralize, triangulate with a strong elimination order, and link.

    ``query_sets`` adds fill edges so every listed set ends up inside one
    clique (needed for joint posteriors over several continuous nodes).
    """
    topo_sort(net)
    query_sets = tuple(tuple(q) for q in query_sets)
    extra = [(a, b) for q in query_sets for i, a in enumerate(q) for b in q[i + 1:]]
    adj = moral_graph(net, extra)
    order, elim = strong_elimination_order(net, adj)
    pos = {v: i for i, v in enumerate(order)}

    # elimination tree: clique i hangs below the clique of the first
    # variable of its separator to be eliminated
    n = len(order)
    parent: list[int | None] = [None] * n
    for i, v in enumerate(order):
        sep = elim[i] - {v}
        if sep:
            parent[i] = min(pos[u] for u in sep)
    sets: list[frozenset[str] | None] = list(elim)

    # absorb non-maximal cliques into a containing neighbour
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if sets[i] is None:
                continue
            nbrs = [c for c in range(n) if sets[c] is not None and parent[c] == i]
            if parent[i] is not None:
                nbrs.append(parent[i])
            for k in nbrs:
                if sets[i] <= sets[k]:
                    if k == parent[i]:
                        for c in range(n):
                            if sets[c] is not None and parent[c] == i:
                                parent[c] = k
                    else:
                        parent[k] = parent[i]
                        for c in range(n):
                            if sets[c] is not None and parent[c] == i and c != k:
                                parent[c] = k
                    sets[i] = None
                    parent[i] = None
                    changed = True
                    break

    alive = [i for i in range(n) if sets[i] is not None]
    new_id = {old: new for new, old in enumerate(alive)}
    cliques = [tuple(net.sorted_labels(sets[i])) for i in alive]
    par: list[int | None] = [None if parent[i] is None else new_id[parent[i]] for i in alive]

    roots = [i for i, p in enumerate(par) if p is None]
    n_disc = [sum(net.is_discrete(v) for v in c) for c in cliques]
    root = min(roots, key=lambda r: (-n_disc[r], r))
    for r in roots:
        if r != root:
            par[r] = root

    seps = []
    for i, p in enumerate(par):
        seps.append(() if p is None else tuple(v for v in cliques[i] if v in cliques[p]))

    assignment: dict[str, int] = {}
    for node in net.nodes:
        fam = {node.name, *node.parents}
        hosts = [i for i, c in enumerate(cliques) if fam <= set(c)]
        if not hosts:
            raise StructuralError(f"no clique holds the family of {node.name!r}")
        assignment[node.name] = min(hosts, key=lambda i: (len(cliques[i]), i))

    tree = CliqueTree(net, tuple(cliques), tuple(par), tuple(seps), root, assignment,
                      tuple(order), query_sets)
    problems = check_tree(tree)
    if problems:
        raise StructuralError("; ".join(problems))
    return tree


def cached_clique_tree(net: Network, query_sets: Iterable[Sequence[str]] = ()) -> CliqueTree:
    key = ("clique_tree", tuple(tuple(q) for q in query_sets))
    tree = net._cache.get(key)
    if tree is None:
        tree = build_clique_tree(net, query_sets)
        net._cache[key] = tree
    return tree


def check_tree(tree: CliqueTree) -> list[str]:
    """Structural checks: running intersection, family cover, strong root,
    and a constrained (continuous-first) elimination order."""
    net = tree.net
    problems = []
    seen_discrete = False
    for v in tree.elimination_order:
        if net.is_discrete(v):
            seen_discrete = True
        elif seen_discrete:
            problems.append(f"continuous {v!r} eliminated after a discrete variable")
    # running intersection: cliques containing v form a connected subtree
    for v in net.labels:
        holders = set(tree.cliques_containing(v))
        if not holders:
            problems.append(f"{v!r} is in no clique")
            continue
        tops = [i for i in holders if tree.parent[i] not in holders]
        if len(tops) != 1:
            problems.append(f"running intersection fails for {v!r}")
    for node in net.nodes:
        fam = {node.name, *node.parents}
        if not fam <= set(tree.cliques[tree.assignment[node.name]]):
            problems.append(f"family of {node.name!r} not inside its clique")
    for i, p in enumerate(tree.parent):
        if p is None:
            continue
        sep = set(tree.separators[i])
        rest = set(tree.cliques[i]) - sep
        if not (all(not net.is_discrete(v) for v in rest) or all(net.is_discrete(v) for v in sep)):
            problems.append(f"strong root property fails on edge {i}->{p}")
    return problems


# -- propagation -----------------------------------------------------------

@dataclass
class CalibratedTree:
    """Clique potentials after propagation.

    ``potentials`` maps clique id to its calibrated (unnormalized) potential;
    after a branch update only the branch cliques are present.
    """

    tree: CliqueTree
    evidence: Evidence
    potentials: dict[int, CGPotential]
    base: dict[int, CGPotential]
    collect_messages: dict[int, CGPotential]
    log_likelihood: float
    _branch_cache: dict = field(default_factory=dict, repr=False)

    @property
    def complete(self) -> bool:
        return len(self.potentials) == len(self.tree.cliques)


def _clique_domain(tree: CliqueTree, i: int, observed: Iterable[str]):
    net = tree.net
    obs = set(observed)
    disc = [v for v in tree.cliques[i] if net.is_discrete(v)]
    cards = [net.cardinality(v) for v in disc]
    cont = [v for v in tree.cliques[i] if not net.is_discrete(v) and v not in obs]
    return disc, cards, cont


def node_potential(net: Network, label: str) -> CGPotential:
    """The CPD of ``label`` as a CG potential."""
    key = ("node_potential", label)
    pot = net._cache.get(key)
    if pot is not None:
        return pot
    node = net.node(label)
    if node.kind == "discrete":
        pot = CGPotential.from_table(node.parents + (label,), node.cpt)
    else:
        cards = [net.cardinality(p) for p in node.discrete_parents]
        pot = CGPotential.from_clg(label, node.discrete_parents, cards, node.continuous_parents,
                                   node.intercept, node.coefficients, node.variance)
    net._cache[key] = pot
    return pot


def initial_potentials(tree: CliqueTree, ev: Evidence) -> dict[int, CGPotential]:
    net = tree.net
    cont_ev = Evidence({}, ev.continuous)
    factors: dict[int, list[CGPotential]] = {i: [] for i in range(len(tree.cliques))}
    for label in net.labels:
        pot = node_potential(net, label)
        if any(v in ev.continuous for v in pot.continuous):
            pot = reduce_evidence(pot, cont_ev)
        factors[tree.assignment[label]].append(pot)
    for label, state in ev.discrete.items():
        factors[tree.assignment[label]].append(
            CGPotential.indicator(label, net.cardinality(label), state))
    out = {}
    for i in range(len(tree.cliques)):
        disc, cards, cont = _clique_domain(tree, i, ev.continuous)
        pot = CGPotential.unit(disc, cards, cont)
        g, h, K = pot.g, pot.h, pot.K
        for f in factors[i]:
            e = extend(f, disc, cards, cont)
            g = g + e.g
            h = h + e.h
            K = K + e.K
        out[i] = CGPotential(disc, cards, cont, g, h, K)._clean()
    return out


def _collect(tree: CliqueTree, pots: dict[int, CGPotential], members: Sequence[int],
             extra: Mapping[int, list[CGPotential]] | None = None):
    """Collect towards the root inside ``members`` (a rooted subtree in
    collect order). Returns the collected potentials and the messages."""
    member_set = set(members)
    collected = dict(pots)
    msgs: dict[int, CGPotential] = {}
    for i in members:
        pot = collected[i]
        for c in tree.children[i]:
            if c in member_set:
                pot = multiply(pot, msgs[c])
        if extra and i in extra:
            for m in extra[i]:
                pot = multiply(pot, m)
        collected[i] = pot
        if tree.parent[i] is not None and tree.parent[i] in member_set:
            msgs[i] = marginalize(pot, tree.separators[i])
    return collected, msgs


def _distribute(tree: CliqueTree, collected: dict[int, CGPotential], msgs: Mapping[int, CGPotential],
                members: Sequence[int]) -> dict[int, CGPotential]:
    member_set = set(members)
    out = {tree.root: collected[tree.root]}
    for i in reversed(members):
        if i == tree.root:
            continue
        p = tree.parent[i]
        if p not in member_set:
            continue
        down = marginalize(out[p], tree.separators[i])
        out[i] = multiply(collected[i], divide(down, msgs[i]))
    return out


def _log_likelihood(root_pot: CGPotential) -> float:
    ll = root_pot.total_log_mass()
    if not np.isfinite(ll):
        raise InconsistentEvidenceError("evidence has zero likelihood under the model")
    return ll


def propagate(tree: CliqueTree, ev: Evidence | None = None) -> CalibratedTree:
    """Collect to the strong root, then distribute back out."""
    ev = ev if ev is not None else Evidence()
    check_evidence(tree.net, ev)
    base = initial_potentials(tree, ev)
    order = list(tree.collect_order)
    collected, msgs = _collect(tree, base, order)
    ll = _log_likelihood(collected[tree.root])
    pots = _distribute(tree, collected, msgs, order)
    return CalibratedTree(tree, ev, pots, base, msgs, ll)


def branch_repropagate(cal: CalibratedTree, branch: Iterable[int], e_delta: Evidence) -> CalibratedTree:
    """Re-propagate only inside ``branch`` after adding ``e_delta``.

    The branch is widened with the path from each of its cliques to the
    strong root. Messages entering the branch from outside flow towards the
    root and depend only on evidence outside the branch, so they are reused
    from ``cal``; the resulting branch potentials equal those of a full
    propagation with ``cal.evidence`` merged with ``e_delta``.
    """
    tree = cal.tree
    if not cal.complete:
        raise ArgumentError("branch updates start from a fully calibrated tree")
    members: set[int] = set()
    for i in branch:
        if not 0 <= i < len(tree.cliques):
            raise ArgumentError(f"unknown clique id {i}")
        members.update(tree.path_to_root(i))
    for v in e_delta:
        if not any(v in tree.cliques[i] for i in members):
            raise ArgumentError(f"branch does not cover evidence on {v!r}")
    total = cal.evidence.merge(e_delta)
    check_evidence(tree.net, total)
    order = [i for i in tree.collect_order if i in members]

    key = frozenset(members)
    prepared = cal._branch_cache.get(key)
    if prepared is None:
        # base potentials with the untouched subtrees already absorbed
        prepared = {}
        for i in order:
            pot = cal.base[i]
            for c in tree.children[i]:
                if c not in members:
                    pot = multiply(pot, cal.collect_messages[c])
            prepared[i] = pot
        cal._branch_cache[key] = prepared

    pots = dict(prepared)
    if e_delta.continuous:
        cont = Evidence({}, e_delta.continuous)
        for i in order:
            pots[i] = reduce_evidence(pots[i], cont)
    net = tree.net
    for v, state in e_delta.discrete.items():
        host = min((i for i in order if v in tree.cliques[i]), key=lambda i: (len(tree.cliques[i]), i))
        pots[host] = multiply(pots[host], CGPotential.indicator(v, net.cardinality(v), state))

    collected, msgs = _collect(tree, pots, order)
    ll = _log_likelihood(collected[tree.root])
    out = _distribute(tree, collected, msgs, order)
    return CalibratedTree(tree, total, out, pots, msgs, ll)


# -- queries ---------------------------------------------------------------

def _host(cal: CalibratedTree, variables: Iterable[str]) -> int:
    vs = set(variables)
    found = [i for i in cal.potentials if vs <= set(cal.tree.cliques[i])]
    if not found:
        raise ArgumentError(f"no calibrated clique contains {sorted(vs)}")
    return min(found, key=lambda i: (len(cal.tree.cliques[i]), i))


def node_marginal(cal: CalibratedTree, x: str) -> np.ndarray | MomentSummary:
    """Posterior of one node: a probability vector for discrete nodes, the
    weak (moment-matched) posterior for continuous ones."""
    net = cal.tree.net
    net.index(x)
    if x in cal.evidence.discrete:
        out = np.zeros(net.cardinality(x))
        out[cal.evidence.discrete[x]] = 1.0
        return out
    if x in cal.evidence.continuous:
        return MomentSummary(1.0, np.array([cal.evidence.continuous[x]]), np.zeros((1, 1)))
    pot = marginalize(cal.potentials[_host(cal, [x])], [x])
    if net.is_discrete(x):
        p = np.exp(pot.g - pot.total_log_mass())
        return p / p.sum()
    mt = to_moments(pot)
    return MomentSummary(1.0, mt.mean.copy(), mt.cov.copy())


def discrete_marginal(cal: CalibratedTree, variables: Sequence[str]) -> np.ndarray:
    """Joint posterior table over discrete variables sharing a clique."""
    pot = marginalize(cal.potentials[_host(cal, variables)], variables)
    pot = extend(pot, list(variables), [cal.tree.net.cardinality(v) for v in variables], ())
    with np.errstate(invalid="ignore"):
        p = np.exp(pot.g - pot.total_log_mass())
    return p / p.sum()


def clique_log_masses(cal: CalibratedTree) -> dict[int, float]:
    """Total log-mass of every calibrated clique (all equal the evidence
    log-likelihood after calibration)."""
    return {i: p.total_log_mass() for i, p in cal.potentials.items()}
