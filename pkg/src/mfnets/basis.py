"""Total-degree polynomial bases used for node bias and edge weighting functions.

Columns follow graded-lexicographic order of the multi-indices: all indices of
total degree 0, then degree 1, and so on; within a degree, larger exponents on
earlier coordinates come first. For ``dim=2, degree=2`` the columns are
``1, x1, x2, x1^2, x1*x2, x2^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb
from typing import Optional

import numpy as np
from numpy.polynomial import legendre

KINDS = ("monomial", "legendre")


class BasisError(ValueError):
    """Raised for an invalid basis specification or mismatched evaluation points."""


def _compositions(total: int, dim: int):
    # exponent tuples of length dim summing to total, lexicographically descending
    if dim == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, dim - 1):
            yield (first,) + rest


def total_degree_indices(degree: int, dim: int) -> list[tuple[int, ...]]:
    """Multi-indices with total degree <= ``degree`` in graded-lexicographic order."""
    return [idx for t in range(degree + 1) for idx in _compositions(t, dim)]


@dataclass(frozen=True)
class BasisSpec:
    """Declarative description of a polynomial basis.

    Parameters
    ----------
    kind : str
        ``"monomial"`` or ``"legendre"``.
    degree : int
        Total degree of the truncation.
    dim : int
        Input dimension.
    bounds : sequence of (lo, hi) pairs, optional
        Per-dimension interval. Legendre polynomials are evaluated after the
        affine map of each interval onto [-1, 1]; required for that kind.
    """

    kind: str = "monomial"
    degree: int = 1
    dim: int = 1
    bounds: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.bounds is not None:
            object.__setattr__(
                self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds)
            )

    @property
    def cardinality(self) -> int:
        return comb(self.degree + self.dim, self.dim)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "degree": self.degree, "dim": self.dim}
        if self.bounds is not None:
            out["bounds"] = [list(b) for b in self.bounds]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        unknown = set(d) - {"kind", "degree", "dim", "bounds"}
        if unknown:
            raise BasisError(f"unknown basis fields: {sorted(unknown)}")
        bounds = d.get("bounds")
        return cls(
            kind=d.get("kind", "monomial"),
            degree=int(d.get("degree", 1)),
            dim=int(d.get("dim", 1)),
            bounds=None if bounds is None else tuple(tuple(b) for b in bounds),
        )


class Basis:
    """An immutable, evaluable polynomial basis built from a :class:`BasisSpec`."""

    def __init__(self, spec: BasisSpec):
        self.spec = spec
        self.indices = tuple(total_degree_indices(spec.degree, spec.dim))
        self._exponents = np.array(self.indices, dtype=int).reshape(-1, spec.dim)

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def degree(self) -> int:
        return self.spec.degree

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def cardinality(self) -> int:
        return len(self.indices)

    @cached_property
    def _affine(self):
        lo = np.array([b[0] for b in self.spec.bounds])
        hi = np.array([b[1] for b in self.spec.bounds])
        return 2.0 / (hi - lo), -(hi + lo) / (hi - lo)

    def __call__(self, points) -> np.ndarray:
        return eval_basis(self, points)

    def __repr__(self):
        return f"Basis({self.kind}, degree={self.degree}, dim={self.dim})"

    def _univariate(self, x: np.ndarray) -> np.ndarray:
        """Table of shape (n, dim, degree+1) with 1D polynomials per coordinate."""
        deg = self.degree
        if self.kind == "monomial":
            return x[:, :, None] ** np.arange(deg + 1)
        scale, shift = self._affine
        t = x * scale + shift
        return np.stack(
            [legendre.legval(t, np.eye(deg + 1)[j]) for j in range(deg + 1)], axis=-1
        )


def make_basis(spec: BasisSpec) -> Basis:
    """Validate ``spec`` and construct the corresponding :class:`Basis`."""
    if spec.kind not in KINDS:
        raise BasisError(f"unknown basis kind {spec.kind!r}; expected one of {KINDS}")
    if not isinstance(spec.dim, int) or spec.dim < 1:
        raise BasisError(f"basis dim must be a positive integer, got {spec.dim!r}")
    if not isinstance(spec.degree, int) or spec.degree < 0:
        raise BasisError(f"basis degree must be a nonnegative integer, got {spec.degree!r}")
    if spec.bounds is not None:
        if len(spec.bounds) != spec.dim:
            raise BasisError(f"expected {spec.dim} bound intervals, got {len(spec.bounds)}")
        for lo, hi in spec.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise BasisError(f"invalid interval [{lo}, {hi}]")
    elif spec.kind == "legendre":
        raise BasisError("legendre basis requires finite domain bounds")
    return Basis(spec)


def as_points(points, dim: int) -> np.ndarray:
    """Coerce ``points`` to an (n, dim) float array; 1D input is read as n scalars when dim == 1."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise BasisError(f"points have shape {np.shape(points)}, expected (n, {dim})")
    return x


def eval_basis(basis: Basis, points) -> np.ndarray:
    """Vandermonde-like matrix with entry (i, j) equal to basis function j at point i."""
    x = as_points(points, basis.dim)
    if x.shape[0] == 0:
        return np.zeros((0, basis.cardinality))
    table = basis._univariate(x)
    out = np.ones((x.shape[0], basis.cardinality))
    for d in range(basis.dim):
        out *= table[:, d, basis._exponents[:, d]]
    return out


def cardinality(degree: int, dim: int) -> int:
    return comb(degree + dim, dim)

