"""Parameterized multifidelity network: forward evaluation sweep and backward gradient sweep.

A node evaluates as ``f_i(x) = sum_j rho_ji(x) f_j(x) + delta_i(x)`` over its
parents ``j``, with ``rho_ji = W_ji(x) @ alpha_ji`` and ``delta_i = V_i(x) @ beta_i``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import Basis, as_points, make_basis
from .graph import GraphError, GraphSpec, TraversalIndex, UnknownNodeError, validate


class LayoutError(ValueError):
    """Parameter vector does not match the network it is used with."""


class StaleCacheError(ValueError):
    pass


class NonMonomialBasisError(ValueError):
    pass


def node_key(i: int) -> tuple:
    return ("node", i)


def edge_key(j: int, i: int) -> tuple:
    return ("edge", j, i)


def key_name(key: tuple) -> str:
    if key[0] == "node":
        return f"beta[{key[1]}]"
    return f"alpha[{key[1]}->{key[2]}]"


@dataclass(frozen=True)
class ParamLayout:
    """Contiguous slices of the flat parameter vector.

    Node slices (ascending id) come first, then edge slices ordered by
    (source, target).
    """

    slices: dict
    size: int

    @classmethod
    def from_graph(cls, graph: GraphSpec) -> "ParamLayout":
        slices = {}
        pos = 0
        for i in sorted(graph.nodes):
            n = graph.nodes[i].cardinality
            slices[node_key(i)] = slice(pos, pos + n)
            pos += n
        for e in sorted(graph.edges, key=lambda e: e.key):
            n = e.basis.cardinality
            slices[edge_key(*e.key)] = slice(pos, pos + n)
            pos += n
        return cls(slices, pos)

    def to_records(self) -> list[dict]:
        out = []
        for key, s in self.slices.items():
            rec = {"kind": key[0], "start": s.start, "stop": s.stop}
            if key[0] == "node":
                rec["node"] = key[1]
            else:
                rec["source"], rec["target"] = key[1], key[2]
            out.append(rec)
        return out

    @classmethod
    def from_records(cls, records: list[dict]) -> "ParamLayout":
        slices = {}
        for rec in records:
            if rec["kind"] == "node":
                key = node_key(int(rec["node"]))
            else:
                key = edge_key(int(rec["source"]), int(rec["target"]))
            slices[key] = slice(int(rec["start"]), int(rec["stop"]))
        size = max((s.stop for s in slices.values()), default=0)
        return cls(slices, size)


@dataclass
class ParamVector:
    """Flat parameter (or gradient) values together with their layout."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.size,):
            raise LayoutError(
                f"parameter vector has shape {self.values.shape}, layout expects ({self.layout.size},)"
            )

    def __getitem__(self, key) -> np.ndarray:
        return self.values[self.layout.slices[key]]

    def __setitem__(self, key, value):
        self.values[self.layout.slices[key]] = value

    def beta(self, i: int) -> np.ndarray:
        return self[node_key(i)]

    def alpha(self, j: int, i: int) -> np.ndarray:
        return self[edge_key(j, i)]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(np.array(values, dtype=float), self.layout)

    def __len__(self):
        return self.layout.size


GradVector = ParamVector


class MFNet:
    """A validated graph with instantiated bases and a parameter layout."""

    def __init__(self, graph: GraphSpec):
        self.graph = graph
        self.index: TraversalIndex = validate(graph)
        self.node_bases: dict[int, Basis] = {k: make_basis(s) for k, s in graph.nodes.items()}
        self.edge_bases: dict[tuple, Basis] = {e.key: make_basis(e.basis) for e in graph.edges}
        dims = {b.dim for b in self.node_bases.values()} | {b.dim for b in self.edge_bases.values()}
        if len(dims) > 1:
            raise GraphError(f"all bases must share one input dimension, found {sorted(dims)}")
        self.dim = dims.pop()
        self.layout = ParamLayout.from_graph(graph)

    @property
    def target(self) -> int:
        return self.graph.target

    def check(self, params: ParamVector):
        if params.layout != self.layout:
            raise LayoutError("parameter layout does not match the network")

    def require_node(self, k: int):
        if k not in self.graph.nodes:
            raise UnknownNodeError(f"unknown node {k}")

    def design(self, k: int, points) -> dict:
        """Basis matrices of every node and edge in the scope of ``k`` at ``points``.

        Reusable across sweeps on the same points (parameter-independent).
        """
        self.require_node(k)
        x = as_points(points, self.dim)
        if x.shape[0] == 0:
            raise ValueError("empty point set")
        scope = self.index.scope(k)
        out = {node_key(i): self.node_bases[i](x) for i in scope}
        for i in scope:
            for j in self.index.parents[i]:
                out[edge_key(j, i)] = self.edge_bases[(j, i)](x)
        return out


def as_network(graph) -> MFNet:
    return graph if isinstance(graph, MFNet) else MFNet(graph)


def init_params(graph, scheme: str = "zeros", seed: int = 0, scale: float = 1.0) -> ParamVector:
    """Initial parameters.

    ``gaussian`` draws i.i.d. N(0, scale^2); ``constant-edge-one`` (alias
    ``edge-one``) sets every edge's constant coefficient to one and the rest to
    zero, so each child starts as the sum of its parents.
    """
    net = as_network(graph)
    p = ParamVector(np.zeros(net.layout.size), net.layout)
    if scheme == "zeros":
        pass
    elif scheme == "gaussian":
        p.values[:] = np.random.default_rng(seed).normal(0.0, scale, net.layout.size)
    elif scheme in ("constant-edge-one", "edge-one"):
        for e in net.graph.edges:
            # column 0 is the constant function for monomial and legendre kinds alike
            p[edge_key(*e.key)][0] = 1.0
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return p


@dataclass
class SweepCache:
    node: int
    n: int
    scope: frozenset
    z: dict = field(default_factory=dict)
    dz_node: dict = field(default_factory=dict)
    dz_edge: dict = field(default_factory=dict)
    edge_products: dict = field(default_factory=dict)
    rho: dict = field(default_factory=dict)


def forward_sweep(graph, params: ParamVector, k: int, points, design: Optional[dict] = None) -> SweepCache:
    """Evaluate node ``k`` and all its ancestors breadth-first, caching partial derivatives.

    ``design`` may hold precomputed basis matrices from :meth:`MFNet.design`.
    """
    net = as_network(graph)
    net.check(params)
    if design is None:
        design = net.design(k, points)
    idx = net.index
    scope = idx.scope(k)
    n = design[node_key(k)].shape[0]
    cache = SweepCache(node=k, n=n, scope=scope)

    queue = deque()
    for i in sorted(scope):
        V = design[node_key(i)]
        cache.dz_node[i] = V
        cache.z[i] = V @ params.beta(i)
        if not idx.parents[i]:
            queue.append(i)

    included = dict.fromkeys(scope, 0)
    while queue:
        ell = queue.popleft()
        z_ell = cache.z[ell]
        for c in sorted(idx.children[ell] & scope):
            W = design[edge_key(ell, c)]
            alpha = params.alpha(ell, c)
            dz = z_ell[:, None] * W
            prod = dz @ alpha
            cache.dz_edge[(ell, c)] = dz
            cache.edge_products[(ell, c)] = prod
            cache.rho[(ell, c)] = W @ alpha
            cache.z[c] = cache.z[c] + prod
            included[c] += 1
            if included[c] == len(idx.parents[c]):
                queue.append(c)
    return cache


def evaluate(graph, params: ParamVector, k: int, points, design: Optional[dict] = None) -> np.ndarray:
    """Prediction of node ``k`` at ``points``."""
    return forward_sweep(graph, params, k, points, design).z[k]


def backward_sweep(graph, cache: SweepCache, residual, sigma: float = 1.0) -> ParamVector:
    """Gradient of ``(1 / (2 sigma^2)) * ||residual||^2`` with respect to every parameter.

    ``residual`` is ``y - f_k(x)`` at the points of the forward sweep that
    produced ``cache``. Entries outside the scope of the swept node stay zero.
    """
    net = as_network(graph)
    r = np.asarray(residual, dtype=float)
    if r.shape != (cache.n,):
        raise StaleCacheError(f"residual has shape {r.shape}, forward sweep used {cache.n} points")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    idx = net.index
    scope = cache.scope
    grad = ParamVector(np.zeros(net.layout.size), net.layout)

    carry = {ell: np.zeros(cache.n) for ell in scope}
    carry[cache.node] = -r / sigma**2
    pending = {ell: len(idx.children[ell] & scope) for ell in scope}
    queue = deque([cache.node])
    while queue:
        ell = queue.popleft()
        p_ell = carry[ell]
        grad[node_key(ell)] += p_ell @ cache.dz_node[ell]
        for c in sorted(idx.parents[ell]):
            grad[edge_key(c, ell)] += p_ell @ cache.dz_edge[(c, ell)]
            carry[c] += p_ell * cache.rho[(c, ell)]
            pending[c] -= 1
            if pending[c] == 0:
                queue.append(c)
    return grad


# -- global polynomial expansion ------------------------------------------------


def _poly_from_coeffs(basis: Basis, coeffs) -> dict:
    return {idx: float(c) for idx, c in zip(basis.indices, coeffs) if c != 0.0}


def poly_add(a: dict, b: dict) -> dict:
    out = dict(a)
    for m, c in b.items():
        out[m] = out.get(m, 0.0) + c
    return out


def poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = tuple(x + y for x, y in zip(ma, mb))
            out[m] = out.get(m, 0.0) + ca * cb
    return out


def poly_degree(poly: dict, tol: float = 0.0) -> int:
    """Total degree, ignoring coefficients with magnitude <= ``tol``; -1 for the zero polynomial."""
    return max((sum(m) for m, c in poly.items() if abs(c) > tol), default=-1)


def poly_eval(poly: dict, points, dim: Optional[int] = None) -> np.ndarray:
    if dim is None:
        dim = len(next(iter(poly))) if poly else 1
    x = as_points(points, dim)
    out = np.zeros(x.shape[0])
    for m, c in poly.items():
        out += c * np.prod(x ** np.array(m), axis=1)
    return out


def expand_to_polynomial(graph, params: ParamVector, k: int) -> dict:
    """Expand node ``k`` into a single polynomial ``{exponent tuple: coefficient}``.

    Needs monomial bases throughout the scope of ``k``.
    """
    net = as_network(graph)
    net.check(params)
    net.require_node(k)
    idx = net.index
    scope = idx.scope(k)
    for i in scope:
        bases = [net.node_bases[i]] + [net.edge_bases[(j, i)] for j in idx.parents[i]]
        if any(b.kind != "monomial" for b in bases):
            raise NonMonomialBasisError("polynomial expansion requires monomial bases")
    polys: dict[int, dict] = {}
    for i in idx.topo_order:
        if i not in scope:
            continue
        acc = _poly_from_coeffs(net.node_bases[i], params.beta(i))
        for j in sorted(idx.parents[i]):
            rho = _poly_from_coeffs(net.edge_bases[(j, i)], params.alpha(j, i))
            acc = poly_add(acc, poly_mul(rho, polys[j]))
        polys[i] = acc
    return polys[k]
