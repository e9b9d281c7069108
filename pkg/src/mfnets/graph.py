"""DAG structure of a multifidelity network and traversal utilities."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .basis import BasisSpec


class GraphError(ValueError):
    """Base class for structural problems with a graph specification."""


class CycleError(GraphError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        path = " -> ".join(str(c) for c in self.cycle + self.cycle[:1])
        super().__init__(f"cycle detected: {path}")


class DanglingEdgeError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class UnknownNodeError(GraphError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown node"


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    basis: BasisSpec = field(default_factory=BasisSpec)

    @property
    def key(self) -> tuple[int, int]:
        return (self.source, self.target)


@dataclass(frozen=True)
class GraphSpec:
    """Nodes with their bias bases, edges with their weighting bases, and a target node.

    ``nodes`` maps node id to the node's :class:`BasisSpec`.
    """

    nodes: dict
    edges: tuple = ()
    target: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", {int(k): v for k, v in self.nodes.items()})
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.target is None and self.nodes:
            object.__setattr__(self, "target", max(self.nodes))

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def edge(self, source: int, target: int) -> Edge:
        for e in self.edges:
            if e.key == (source, target):
                return e
        raise UnknownNodeError(f"no edge {source} -> {target}")

    def with_target(self, target: int) -> "GraphSpec":
        return GraphSpec(dict(self.nodes), self.edges, target)

    def reversed(self) -> "GraphSpec":
        edges = tuple(Edge(e.target, e.source, e.basis) for e in self.edges)
        return GraphSpec(dict(self.nodes), edges, self.target)

    def relabel(self, mapping: dict) -> "GraphSpec":
        """Copy with node ids renamed through ``mapping``."""
        nodes = {mapping[k]: v for k, v in self.nodes.items()}
        edges = tuple(Edge(mapping[e.source], mapping[e.target], e.basis) for e in self.edges)
        return GraphSpec(nodes, edges, mapping[self.target])


def build_graph(
    node_ids: Iterable[int],
    edges: Iterable[tuple[int, int]],
    node_basis: BasisSpec | dict | None = None,
    edge_basis: BasisSpec | dict | None = None,
    target: Optional[int] = None,
) -> GraphSpec:
    """Convenience constructor; bases may be shared specs or per-item dicts."""
    node_ids = list(node_ids)
    node_basis = BasisSpec() if node_basis is None else node_basis
    edge_basis = BasisSpec() if edge_basis is None else edge_basis
    nodes = {
        i: (node_basis[i] if isinstance(node_basis, dict) else node_basis) for i in node_ids
    }
    elist = [
        Edge(j, i, edge_basis[(j, i)] if isinstance(edge_basis, dict) else edge_basis)
        for j, i in edges
    ]
    return GraphSpec(nodes, tuple(elist), target)


@dataclass(frozen=True)
class TraversalIndex:
    topo_order: tuple
    parents: dict
    children: dict
    ancestors: dict
    roots: tuple

    def scope(self, node: int) -> frozenset:
        """The node together with its ancestors."""
        return self.ancestors[node] | {node}


def _find_cycle(nodes, children) -> list[int]:
    color = {k: 0 for k in nodes}
    stack: list[int] = []

    def visit(u):
        color[u] = 1
        stack.append(u)
        for v in sorted(children[u]):
            if color[v] == 1:
                return stack[stack.index(v):]
            if color[v] == 0:
                found = visit(v)
                if found:
                    return found
        stack.pop()
        color[u] = 2
        return None

    for k in sorted(nodes):
        if color[k] == 0:
            found = visit(k)
            if found:
                return found
    return []


def validate(spec: GraphSpec) -> TraversalIndex:
    """Check the graph and precompute parents, children, ancestors and a topological order.

    Ties in the topological order are broken by ascending node id.
    """
    ids = set(spec.nodes)
    if any(not isinstance(k, int) or k < 1 for k in ids):
        raise GraphError("node ids must be positive integers")
    seen = set()
    for e in spec.edges:
        for end in e.key:
            if end not in ids:
                raise DanglingEdgeError(f"edge {e.source} -> {e.target} references unknown node {end}")
        if e.source == e.target:
            raise CycleError([e.source])
        if e.key in seen:
            raise DuplicateEdgeError(f"duplicate edge {e.source} -> {e.target}")
        seen.add(e.key)
    if spec.target not in ids:
        raise UnknownNodeError(f"target node {spec.target} is not in the graph")

    parents = {k: set() for k in ids}
    children = {k: set() for k in ids}
    for e in spec.edges:
        parents[e.target].add(e.source)
        children[e.source].add(e.target)

    indeg = {k: len(parents[k]) for k in ids}
    heap = [k for k in ids if indeg[k] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != len(ids):
        remaining = ids - set(order)
        raise CycleError(_find_cycle(remaining, {k: children[k] & remaining for k in remaining}))

    ancestors: dict[int, frozenset] = {}
    for k in order:
        acc = set(parents[k])
        for j in parents[k]:
            acc |= ancestors[j]
        ancestors[k] = frozenset(acc)

    return TraversalIndex(
        topo_order=tuple(order),
        parents={k: frozenset(v) for k, v in parents.items()},
        children={k: frozenset(v) for k, v in children.items()},
        ancestors=ancestors,
        roots=tuple(k for k in order if not parents[k]),
    )


def is_weakly_connected(spec: GraphSpec) -> bool:
    ids = list(spec.nodes)
    if not ids:
        return False
    adj = {k: set() for k in ids}
    for e in spec.edges:
        adj[e.source].add(e.target)
        adj[e.target].add(e.source)
    seen = {ids[0]}
    frontier = [ids[0]]
    while frontier:
        u = frontier.pop()
        for v in adj[u] - seen:
            seen.add(v)
            frontier.append(v)
    return len(seen) == len(ids)


def longest_chain(spec: GraphSpec, node: int, index: Optional[TraversalIndex] = None) -> int:
    """Number of nodes on the longest root-to-``node`` path (a root gives 1)."""
    index = validate(spec) if index is None else index
    if node not in index.parents:
        raise UnknownNodeError(f"unknown node {node}")
    depth: dict[int, int] = {}
    for k in index.topo_order:
        depth[k] = 1 + max((depth[j] for j in index.parents[k]), default=0)
    return depth[node]
