"""Negative log-likelihood over all data-bearing nodes, plus l2 / l1 penalties."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .basis import as_points
from .graph import UnknownNodeError
from .mfnet import MFNet, ParamVector, as_network, backward_sweep, forward_sweep

LOG_2PI = np.log(2.0 * np.pi)


class DuplicateNodeDataError(ValueError):
    pass


class NegativeLambdaError(ValueError):
    pass


@dataclass
class NodeData:
    """Observations ``y`` at points ``x`` of one information source with noise scale ``sigma``."""

    node: int
    x: np.ndarray
    y: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(-1, 1) if x.size == self.y.size else x.reshape(1, -1)
        self.x = x
        if self.y.size < 1:
            raise ValueError(f"node {self.node}: no observations")
        if self.x.shape[0] != self.y.size:
            raise ValueError(
                f"node {self.node}: {self.x.shape[0]} sample points but {self.y.size} observations"
            )
        if not self.sigma > 0:
            raise ValueError(f"node {self.node}: sigma must be positive, got {self.sigma}")
        self.sigma = float(self.sigma)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass
class RegConfig:
    """Penalty kind and weights.

    Per-item weights override ``default_lambda``; items without one get
    ``default_lambda / 2``.
    """

    kind: str = "none"
    default_lambda: float = 0.0
    lambda_node: dict = field(default_factory=dict)
    lambda_edge: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "laplace"):
            raise ValueError(f"unknown regularization kind {self.kind!r}")
        weights = [self.default_lambda, *self.lambda_node.values(), *self.lambda_edge.values()]
        if any(not w >= 0 for w in weights):
            raise NegativeLambdaError("regularization weights must be nonnegative")

    def weights(self, layout) -> np.ndarray:
        """Per-coordinate penalty weights matching ``layout``."""
        w = np.empty(layout.size)
        for key, s in layout.slices.items():
            if key[0] == "node":
                lam = self.lambda_node.get(key[1], self.default_lambda / 2)
            else:
                lam = self.lambda_edge.get((key[1], key[2]), self.default_lambda / 2)
            w[s] = lam
        return w


class Problem:
    """Network plus datasets with basis matrices precomputed for repeated objective calls."""

    def __init__(self, graph, datasets: Sequence[NodeData]):
        self.net: MFNet = as_network(graph)
        datasets = list(datasets)
        if not datasets:
            raise ValueError("at least one dataset is required")
        seen = set()
        for d in datasets:
            if d.node in seen:
                raise DuplicateNodeDataError(f"more than one dataset for node {d.node}")
            if d.node not in self.net.graph.nodes:
                raise UnknownNodeError(f"dataset refers to unknown node {d.node}")
            seen.add(d.node)
        self.datasets = sorted(datasets, key=lambda d: d.node)
        self.designs = {d.node: self.net.design(d.node, d.x) for d in self.datasets}

    @property
    def layout(self):
        return self.net.layout

    def _as_params(self, params) -> ParamVector:
        if isinstance(params, ParamVector):
            return params
        return ParamVector(np.asarray(params, dtype=float), self.layout)

    @property
    def constant(self) -> float:
        """Parameter-independent part of the NLL (normalization terms)."""
        return float(sum(_nll_value(np.zeros(d.n), d.sigma) for d in self.datasets))

    def misfit(self, params, with_grad: bool = True):
        """Weighted squared-residual part of the NLL, ``sum ||r_k||^2 / (2 sigma_k^2)``.

        Differs from :meth:`nll` by :attr:`constant` only; optimizers use it so
        that the large normalization terms do not swamp small decreases.
        """
        params = self._as_params(params)
        total = 0.0
        grad = np.zeros(self.layout.size) if with_grad else None
        for d in self.datasets:
            cache = forward_sweep(self.net, params, d.node, d.x, self.designs[d.node])
            r = d.y - cache.z[d.node]
            total += 0.5 * float(r @ r) / d.sigma**2
            if with_grad:
                grad += backward_sweep(self.net, cache, r, d.sigma).values
        return total, grad

    def nll(self, params, with_grad: bool = True):
        """Total negative log-likelihood and (optionally) its gradient as a flat array."""
        value, grad = self.misfit(params, with_grad)
        return self.constant + value, grad


def _nll_value(r: np.ndarray, sigma: float) -> float:
    n = r.size
    return 0.5 * n * LOG_2PI + n * np.log(sigma) + 0.5 * float(r @ r) / sigma**2


def node_nll(graph, params: ParamVector, data: NodeData) -> float:
    net = as_network(graph)
    net.require_node(data.node)
    z = forward_sweep(net, params, data.node, as_points(data.x, net.dim)).z[data.node]
    return _nll_value(data.y - z, data.sigma)


def total_nll(graph, params: ParamVector, datasets: Iterable[NodeData]):
    """Sum of node NLLs and the accumulated gradient (a :class:`ParamVector`)."""
    prob = Problem(graph, datasets)
    value, grad = prob.nll(params)
    return value, ParamVector(grad, prob.layout)


def _require_kind(reg: RegConfig, kind: str):
    if reg.kind != kind:
        raise ValueError(f"expected a {kind} regularization config, got {reg.kind!r}")


def l2_penalty(params: ParamVector, reg: RegConfig):
    _require_kind(reg, "gaussian")
    w = reg.weights(params.layout)
    th = params.values
    return float(np.sum(w * th * th)), ParamVector(2.0 * w * th, params.layout)


def l1_penalty(params: ParamVector, reg: RegConfig) -> float:
    _require_kind(reg, "laplace")
    w = reg.weights(params.layout)
    return float(np.sum(w * np.abs(params.values)))


def regularized_objective(graph, params: ParamVector, datasets, reg: Optional[RegConfig] = None,
                          problem: Optional[Problem] = None):
    """Penalized objective value and gradient.

    For ``laplace`` the returned gradient is that of the smooth (likelihood)
    part only; the value includes the l1 term.
    """
    reg = RegConfig() if reg is None else reg
    prob = Problem(graph, datasets) if problem is None else problem
    value, grad = prob.nll(params)
    if reg.kind == "gaussian":
        pv, pg = l2_penalty(params, reg)
        value += pv
        grad = grad + pg.values
    elif reg.kind == "laplace":
        value += l1_penalty(params, reg)
    return value, ParamVector(grad, prob.layout)
