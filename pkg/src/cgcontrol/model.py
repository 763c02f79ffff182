"""Hybrid (conditional linear Gaussian) Bayesian networks.

Discrete nodes carry conditional probability tables and may only have
discrete parents. Continuous nodes are linear Gaussian in their continuous
parents, with intercept, coefficients and variance switched by the
configuration of their discrete parents.

Nodes are addressed by their string label throughout the package; the
dense integer index of a label (its position in ``Network.nodes``) is used
for every deterministic tie-break.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ArgumentError, SchemaError, StructuralError

VARIANCE_FLOOR = 1e-12
CPT_TOLERANCE = 1e-9
SCHEMA_VERSION = 1


class NodeId(NamedTuple):
    label: str
    index: int


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteNode:
    """Discrete node with a CPT of shape ``(*parent_cards, n_states)``."""

    name: str
    states: tuple[str, ...]
    cpt: np.ndarray
    parents: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "cpt", _frozen_array(self.cpt))

    @property
    def kind(self) -> str:
        return "discrete"

    @property
    def cardinality(self) -> int:
        return len(self.states)


@dataclass(frozen=True, eq=False)
class ContinuousNode:
    """Conditional linear Gaussian node.

    ``intercept`` and ``variance`` have shape ``parent_cards`` (the
    cardinalities of ``discrete_parents``); ``coefficients`` has shape
    ``(*parent_cards, len(continuous_parents))``.
    """

    name: str
    intercept: np.ndarray
    variance: np.ndarray
    discrete_parents: tuple[str, ...] = ()
    continuous_parents: tuple[str, ...] = ()
    coefficients: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "discrete_parents", tuple(self.discrete_parents))
        object.__setattr__(self, "continuous_parents", tuple(self.continuous_parents))
        intercept = np.asarray(self.intercept, dtype=float)
        object.__setattr__(self, "intercept", _frozen_array(intercept))
        object.__setattr__(self, "variance", _frozen_array(self.variance))
        if self.coefficients is None:
            coef = np.zeros(intercept.shape + (len(self.continuous_parents),))
        else:
            coef = self.coefficients
        object.__setattr__(self, "coefficients", _frozen_array(coef))

    @property
    def kind(self) -> str:
        return "continuous"

    @property
    def parents(self) -> tuple[str, ...]:
        return self.discrete_parents + self.continuous_parents


Node = DiscreteNode | ContinuousNode


class Violation(NamedTuple):
    node: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.node}: [{self.rule}] {self.message}"


class Network:
    """An immutable collection of nodes forming a CG Bayesian network.

    Construction never raises on semantic problems; call :func:`validate`
    to list them. Operations that need a well-formed graph raise
    :class:`StructuralError` or :class:`ArgumentError` as they go.
    """

    def __init__(self, nodes: Iterable[Node], name: str = "network"):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.name = name
        self._index = {}
        for i, node in enumerate(self.nodes):
            self._index.setdefault(node.name, i)
        self._children: dict[str, list[str]] = {n.name: [] for n in self.nodes}
        for node in self.nodes:
            for p in node.parents:
                if p in self._children:
                    self._children[p].append(node.name)
        self._cache: dict[Any, Any] = {}

    def __repr__(self) -> str:
        return f"Network({self.name!r}, {len(self.nodes)} nodes)"

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def labels(self) -> list[str]:
        return [n.name for n in self.nodes]

    @property
    def discrete_labels(self) -> list[str]:
        return [n.name for n in self.nodes if n.kind == "discrete"]

    @property
    def continuous_labels(self) -> list[str]:
        return [n.name for n in self.nodes if n.kind == "continuous"]

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(p, n.name) for n in self.nodes for p in n.parents]

    def node(self, label: str) -> Node:
        try:
            return self.nodes[self._index[label]]
        except KeyError:
            raise ArgumentError(f"unknown node {label!r}") from None

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ArgumentError(f"unknown node {label!r}") from None

    def node_id(self, label: str) -> NodeId:
        return NodeId(label, self.index(label))

    def is_discrete(self, label: str) -> bool:
        return self.node(label).kind == "discrete"

    def cardinality(self, label: str) -> int:
        node = self.node(label)
        if node.kind != "discrete":
            raise ArgumentError(f"{label!r} is continuous")
        return node.cardinality

    def parents(self, label: str) -> tuple[str, ...]:
        return self.node(label).parents

    def children(self, label: str) -> list[str]:
        self.index(label)
        return list(self._children[label])

    def ancestors(self, label: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.parents(label))
        while stack:
            p = stack.pop()
            if p not in seen and p in self:
                seen.add(p)
                stack.extend(self.parents(p))
        return seen

    def descendants(self, label: str) -> set[str]:
        seen: set[str] = set()
        stack = self.children(label)
        while stack:
            c = stack.pop()
            if c not in seen:
                seen.add(c)
                stack.extend(self._children[c])
        return seen

    def sorted_labels(self, labels: Iterable[str]) -> list[str]:
        return sorted(labels, key=self.index)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        out = []
        for node in self.nodes:
            if node.kind == "discrete":
                cards = [self.cardinality(p) for p in node.parents]
                rows = []
                for cfg in itertools.product(*(range(c) for c in cards)):
                    rows.append({
                        "parents": [self.node(p).states[s] for p, s in zip(node.parents, cfg)],
                        "probs": [float(v) for v in node.cpt[cfg]],
                    })
                out.append({
                    "name": node.name,
                    "kind": "discrete",
                    "states": list(node.states),
                    "parents": list(node.parents),
                    "cpt": rows,
                })
            else:
                cards = [self.cardinality(p) for p in node.discrete_parents]
                blocks = []
                for cfg in itertools.product(*(range(c) for c in cards)):
                    blocks.append({
                        "parents": [self.node(p).states[s]
                                    for p, s in zip(node.discrete_parents, cfg)],
                        "intercept": float(node.intercept[cfg]),
                        "coefficients": [float(v) for v in node.coefficients[cfg]],
                        "variance": float(node.variance[cfg]),
                    })
                out.append({
                    "name": node.name,
                    "kind": "continuous",
                    "discrete_parents": list(node.discrete_parents),
                    "continuous_parents": list(node.continuous_parents),
                    "clg": blocks,
                })
        return {"schema_version": SCHEMA_VERSION, "name": self.name, "nodes": out}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Network":
        return network_from_dict(doc)

    def content_hash(self) -> str:
        key = "content_hash"
        if key not in self._cache:
            blob = json.dumps(self.to_dict(), sort_keys=True).encode()
            self._cache[key] = hashlib.sha256(blob).hexdigest()
        return self._cache[key]


def network_from_dict(doc: Mapping) -> Network:
    """Parse the versioned JSON network schema (see ``docs/schema.md``)."""
    if not isinstance(doc, Mapping):
        raise SchemaError("network document must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported or missing schema_version: {doc.get('schema_version')!r}")
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list):
        raise SchemaError("'nodes' must be a list")

    states: dict[str, list[str]] = {}
    for raw in raw_nodes:
        if raw.get("kind") == "discrete":
            states[raw["name"]] = [str(s) for s in raw.get("states", [])]

    def config_index(parents, labels, where):
        if len(labels) != len(parents):
            raise SchemaError(f"{where}: parent configuration {labels!r} has wrong length")
        idx = []
        for p, lab in zip(parents, labels):
            if p not in states:
                raise SchemaError(f"{where}: discrete parent {p!r} is not a discrete node")
            try:
                idx.append(states[p].index(str(lab)))
            except ValueError:
                raise SchemaError(f"{where}: {lab!r} is not a state of {p!r}") from None
        return tuple(idx)

    nodes: list[Node] = []
    for raw in raw_nodes:
        try:
            name = raw["name"]
            kind = raw["kind"]
        except (KeyError, TypeError):
            raise SchemaError(f"node entry missing name/kind: {raw!r}") from None
        if kind == "discrete":
            parents = list(raw.get("parents", []))
            cards = [len(states.get(p, [])) for p in parents]
            cpt = np.full(tuple(cards) + (len(states[name]),), np.nan)
            for row in raw.get("cpt", []):
                cfg = config_index(parents, row.get("parents", []), name)
                probs = row.get("probs", [])
                if len(probs) != len(states[name]):
                    raise SchemaError(f"{name}: CPT row {row!r} has wrong length")
                cpt[cfg] = probs
            nodes.append(DiscreteNode(name, states[name], cpt, parents))
        elif kind == "continuous":
            dparents = list(raw.get("discrete_parents", []))
            cparents = list(raw.get("continuous_parents", []))
            cards = tuple(len(states.get(p, [])) for p in dparents)
            intercept = np.full(cards, np.nan)
            variance = np.full(cards, np.nan)
            coef = np.full(cards + (len(cparents),), np.nan)
            for block in raw.get("clg", []):
                cfg = config_index(dparents, block.get("parents", []), name)
                intercept[cfg] = block["intercept"]
                variance[cfg] = block["variance"]
                c = block.get("coefficients", [])
                if len(c) != len(cparents):
                    raise SchemaError(f"{name}: coefficient count does not match continuous parents")
                coef[cfg] = c
            nodes.append(ContinuousNode(name, intercept, variance, dparents, cparents, coef))
        else:
            raise SchemaError(f"node {name!r}: unknown kind {kind!r}")
    return Network(nodes, name=str(doc.get("name", "network")))


def load_network(path) -> Network:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    return network_from_dict(doc)


# -- validation --------------------------------------------------------

def validate(net: Network) -> list[Violation]:
    """Return every structural or numerical rule the network breaks."""
    out: list[Violation] = []
    seen: set[str] = set()
    for node in net.nodes:
        if node.name in seen:
            out.append(Violation(node.name, "duplicate-label", "label used by more than one node"))
        seen.add(node.name)

    for node in net.nodes:
        name = node.name
        parent_ok = True
        if len(set(node.parents)) != len(node.parents):
            out.append(Violation(name, "duplicate-parent", "a parent is listed twice"))
        for p in node.parents:
            if p == name:
                out.append(Violation(name, "self-parent", "node lists itself as parent"))
                parent_ok = False
            elif p not in net:
                out.append(Violation(name, "unknown-parent", f"parent {p!r} does not exist"))
                parent_ok = False

        if node.kind == "discrete":
            if len(node.states) < 2:
                out.append(Violation(name, "state-count", "a discrete node needs at least 2 states"))
            if len(set(node.states)) != len(node.states):
                out.append(Violation(name, "duplicate-state", "state labels must be unique"))
            for p in node.parents:
                if p in net and not net.is_discrete(p):
                    out.append(Violation(name, "clg-restriction",
                                         f"discrete node has continuous parent {p!r}"))
                    parent_ok = False
            if not parent_ok:
                continue
            shape = tuple(net.cardinality(p) for p in node.parents) + (len(node.states),)
            if node.cpt.shape != shape:
                out.append(Violation(name, "cpt-shape", f"CPT shape {node.cpt.shape} != {shape}"))
                continue
            if not np.all(np.isfinite(node.cpt)):
                out.append(Violation(name, "cpt-missing", "CPT has missing or non-finite entries"))
                continue
            if np.any(node.cpt < 0):
                out.append(Violation(name, "cpt-negative", "CPT has negative entries"))
            sums = node.cpt.sum(axis=-1)
            bad = np.abs(sums - 1.0) > CPT_TOLERANCE
            for cfg in configurations(sums.shape):
                if bad[cfg]:
                    out.append(Violation(name, "cpt-normalization", f"row {cfg} sums to {sums[cfg]:.12g}"))
        else:
            for p in node.discrete_parents:
                if p in net and not net.is_discrete(p):
                    out.append(Violation(name, "parent-kind", f"{p!r} listed as discrete parent but is continuous"))
                    parent_ok = False
            for p in node.continuous_parents:
                if p in net and net.is_discrete(p):
                    out.append(Violation(name, "parent-kind", f"{p!r} listed as continuous parent but is discrete"))
                    parent_ok = False
            if not parent_ok:
                continue
            cards = tuple(net.cardinality(p) for p in node.discrete_parents)
            if node.intercept.shape != cards or node.variance.shape != cards:
                out.append(Violation(name, "param-shape",
                                     f"intercept/variance shape must be {cards}"))
                continue
            if node.coefficients.shape != cards + (len(node.continuous_parents),):
                out.append(Violation(name, "coefficient-count",
                                     "coefficient count must equal continuous-parent count"))
                continue
            if not (np.all(np.isfinite(node.intercept)) and np.all(np.isfinite(node.coefficients))
                    and np.all(np.isfinite(node.variance))):
                out.append(Violation(name, "param-missing", "CLG parameters missing or non-finite"))
                continue
            if np.any(node.variance < VARIANCE_FLOOR):
                out.append(Violation(name, "variance-floor",
                                     f"variance below floor {VARIANCE_FLOOR:g}"))

    try:
        topo_sort(net)
    except StructuralError as exc:
        out.append(Violation(str(exc.args[1]) if len(exc.args) > 1 else "?", "cycle", "graph has a directed cycle"))
    return out


def topo_sort(net: Network) -> list[str]:
    """Kahn's algorithm; among ready nodes the lowest index goes first."""
    import heapq

    indeg = {n.name: 0 for n in net.nodes}
    for node in net.nodes:
        for p in node.parents:
            if p in net:
                indeg[node.name] += 1
    ready = [net.index(l) for l, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        label = net.nodes[i].name
        order.append(label)
        for c in net.children(label):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, net.index(c))
    if len(order) != len(net.nodes):
        stuck = min((l for l, d in indeg.items() if d > 0), key=net.index)
        raise StructuralError("cycle detected", stuck)
    return order


def _require_continuous(net: Network, x: str) -> None:
    if x not in net:
        raise ArgumentError(f"unknown node {x!r}")
    if net.is_discrete(x):
        raise ArgumentError(f"{x!r} is discrete; a continuous node is required")


def continuous_ancestry(net: Network, x: str) -> tuple[set[str], set[str]]:
    """Walk up from ``x`` through continuous nodes only.

    Returns ``(boundary, bridge)``: the discrete nodes met first on each
    upward path and the continuous ancestors passed through.
    """
    _require_continuous(net, x)
    boundary: set[str] = set()
    bridge: set[str] = set()
    stack = list(net.parents(x))
    while stack:
        p = stack.pop()
        if net.is_discrete(p):
            boundary.add(p)
        elif p not in bridge:
            bridge.add(p)
            stack.extend(net.parents(p))
    return boundary, bridge


def discrete_boundary(net: Network, x: str) -> frozenset[str]:
    """Nearest discrete ancestors of ``x``: those with a path into ``x``
    whose interior nodes are all continuous."""
    return frozenset(continuous_ancestry(net, x)[0])


def continuous_bridge(net: Network, x: str, boundary: Iterable[str] | None = None) -> frozenset[str]:
    """Continuous ancestors of ``x`` between it and its discrete boundary.

    A discrete node never has continuous parents, so every continuous
    ancestor of ``x`` reaches it through continuous nodes only.
    """
    found, bridge = continuous_ancestry(net, x)
    if boundary is not None and set(boundary) != found:
        raise ArgumentError("boundary does not match discrete_boundary(net, x)")
    return frozenset(bridge)


# -- evidence ------------------------------------------------------------

@dataclass(frozen=True)
class Evidence:
    """Hard evidence: discrete state indices and continuous values."""

    discrete: Mapping[str, int] = field(default_factory=dict)
    continuous: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        d = {str(k): int(v) for k, v in dict(self.discrete).items()}
        c = {str(k): float(v) for k, v in dict(self.continuous).items()}
        both = set(d) & set(c)
        if both:
            raise ArgumentError(f"nodes observed twice: {sorted(both)}")
        object.__setattr__(self, "discrete", MappingProxyType(d))
        object.__setattr__(self, "continuous", MappingProxyType(c))

    def __len__(self) -> int:
        return len(self.discrete) + len(self.continuous)

    def __iter__(self) -> Iterator[str]:
        yield from self.discrete
        yield from self.continuous

    def __contains__(self, label: str) -> bool:
        return label in self.discrete or label in self.continuous

    def __hash__(self):
        return hash((tuple(sorted(self.discrete.items())), tuple(sorted(self.continuous.items()))))

    def __eq__(self, other):
        if not isinstance(other, Evidence):
            return NotImplemented
        return dict(self.discrete) == dict(other.discrete) and dict(self.continuous) == dict(other.continuous)

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset(self.discrete) | frozenset(self.continuous)

    def merge(self, other: "Evidence") -> "Evidence":
        for k, v in other.discrete.items():
            if k in self.continuous or self.discrete.get(k, v) != v:
                raise ArgumentError(f"conflicting evidence on {k!r}")
        for k, v in other.continuous.items():
            if k in self.discrete or self.continuous.get(k, v) != v:
                raise ArgumentError(f"conflicting evidence on {k!r}")
        return Evidence({**self.discrete, **other.discrete}, {**self.continuous, **other.continuous})

    def restrict(self, labels: Iterable[str]) -> "Evidence":
        keep = set(labels)
        return Evidence({k: v for k, v in self.discrete.items() if k in keep},
                        {k: v for k, v in self.continuous.items() if k in keep})

    def without(self, labels: Iterable[str]) -> "Evidence":
        drop = set(labels)
        return Evidence({k: v for k, v in self.discrete.items() if k not in drop},
                        {k: v for k, v in self.continuous.items() if k not in drop})

    @classmethod
    def from_dict(cls, net: Network, mapping: Mapping[str, Any]) -> "Evidence":
        """Build evidence from ``{label: state label | state index | float}``."""
        disc, cont = {}, {}
        for label, value in mapping.items():
            node = net.node(label)
            if node.kind == "discrete":
                if isinstance(value, str):
                    if value not in node.states:
                        raise ArgumentError(f"{value!r} is not a state of {label!r}")
                    disc[label] = node.states.index(value)
                elif isinstance(value, (bool, float)) or not isinstance(value, (int, np.integer)):
                    raise ArgumentError(f"discrete evidence on {label!r} must be a state label or index")
                else:
                    disc[label] = int(value)
            else:
                if isinstance(value, (str, bool)):
                    raise ArgumentError(f"continuous evidence on {label!r} must be a number")
                cont[label] = float(value)
        ev = cls(disc, cont)
        check_evidence(net, ev)
        return ev

    def to_dict(self, net: Network | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for k, v in self.discrete.items():
            out[k] = net.node(k).states[v] if net is not None else v
        out.update(self.continuous)
        return out

    def content_hash(self) -> str:
        blob = json.dumps({"discrete": dict(sorted(self.discrete.items())),
                           "continuous": dict(sorted(self.continuous.items()))},
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def check_evidence(net: Network, ev: Evidence) -> None:
    """Raise :class:`ArgumentError` unless every observation is in range."""
    for label, state in ev.discrete.items():
        node = net.node(label)
        if node.kind != "discrete":
            raise ArgumentError(f"{label!r} is continuous but received a state index")
        if not 0 <= state < node.cardinality:
            raise ArgumentError(f"state {state} out of range for {label!r}")
    for label, value in ev.continuous.items():
        node = net.node(label)
        if node.kind != "continuous":
            raise ArgumentError(f"{label!r} is discrete but received a real value")
        if not math.isfinite(value):
            raise ArgumentError(f"non-finite observation for {label!r}")


def load_evidence(net: Network, path) -> Evidence:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("evidence must be a flat JSON object")
    return Evidence.from_dict(net, doc)


def configurations(cards: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """All configurations of discrete variables, last variable fastest."""
    return itertools.product(*(range(c) for c in cards))
