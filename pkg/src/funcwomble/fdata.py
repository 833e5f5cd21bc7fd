"""Functional data on a shared grid over [0, 1].

Functions are stored by their values on a common :class:`Grid`; orthonormal
bases (shifted Legendre, Fourier) are only a view used for projection.  All L2
pairings share one quadrature rule, :meth:`Grid.weights`: the composite
trapezoidal rule with Gregory-type end corrections on the first and last few
nodes, which keeps the trapezoidal rule's spectral accuracy for periodic
integrands while integrating polynomials up to degree 11 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Sequence

import numpy as np
from numpy.polynomial import legendre as _leg

from .errors import GridMismatch, GridTooCoarse, InputError

BasisKind = Literal["legendre", "fourier"]

DEFAULT_GRID_SIZE = 101
# nodes corrected at each end; exact for polynomials of degree <= 2 * _END_NODES - 1
_END_NODES = 6


def _trapezoid_weights(t: np.ndarray) -> np.ndarray:
    h = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _shifted_legendre(j: int, t: np.ndarray) -> np.ndarray:
    coef = np.zeros(j + 1)
    coef[j] = 1.0
    return np.sqrt(2 * j + 1) * _leg.legval(2.0 * t - 1.0, coef)


def _corrected_weights(t: np.ndarray) -> np.ndarray:
    m = len(t)
    base = _trapezoid_weights(t)
    # high-order corrections on very short grids can produce negative weights;
    # fall back to fewer corrected nodes until every weight is positive
    for r in range(min(_END_NODES, m // 2), 1, -1):
        idx = np.r_[np.arange(r), np.arange(m - r, m)]
        degrees = range(2 * r)
        local = np.stack([_shifted_legendre(j, t[idx]) for j in degrees])
        full = np.stack([_shifted_legendre(j, t) for j in degrees])
        exact = np.zeros(2 * r)
        exact[0] = 1.0
        w = base.copy()
        w[idx] += np.linalg.solve(local, exact - full @ base)
        if np.all(w > 0):
            return w
    return base


class Grid:
    """Strictly increasing discretisation of [0, 1] with both end points."""

    def __init__(self, points: Sequence[float]):
        pts = np.array(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise InputError("grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise InputError("grid points must be finite")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise InputError(f"grid must start at 0 and end at 1, got [{pts[0]}, {pts[-1]}]")
        if np.any(np.diff(pts) <= 0):
            raise InputError("grid points must be strictly increasing")
        pts.setflags(write=False)
        self.points = pts

    @classmethod
    def uniform(cls, m: int = DEFAULT_GRID_SIZE) -> "Grid":
        pts = np.linspace(0.0, 1.0, m)
        pts[0], pts[-1] = 0.0, 1.0
        return cls(pts)

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    def __repr__(self) -> str:
        return f"Grid(m={len(self)})"

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights for integrals over [0, 1]; positive, summing to 1."""
        w = _corrected_weights(self.points)
        w.setflags(write=False)
        return w


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """One function observed on ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (len(self.grid),):
            raise InputError(f"expected {len(self.grid)} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InputError("functional sample contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn, grid: Grid | None = None) -> "FunctionalSample":
        grid = grid or Grid.uniform()
        return cls(grid, np.broadcast_to(fn(grid.points), grid.points.shape))

    @classmethod
    def constant(cls, c: float, grid: Grid | None = None) -> "FunctionalSample":
        grid = grid or Grid.uniform()
        return cls(grid, np.full(len(grid), float(c)))

    def __add__(self, other: "FunctionalSample") -> "FunctionalSample":
        _check_grids(self, other)
        return FunctionalSample(self.grid, self.values + other.values)

    def __sub__(self, other: "FunctionalSample") -> "FunctionalSample":
        _check_grids(self, other)
        return FunctionalSample(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "FunctionalSample":
        return FunctionalSample(self.grid, self.values * float(c))

    __rmul__ = __mul__


def _check_grids(a: FunctionalSample, b: FunctionalSample) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"samples live on different grids ({a.grid!r} vs {b.grid!r})")


def inner_product(a: FunctionalSample, b: FunctionalSample) -> float:
    """L2 pairing of two samples on the same grid."""
    _check_grids(a, b)
    return float(a.grid.weights @ (a.values * b.values))


def norm_sq(a: FunctionalSample) -> float:
    return max(inner_product(a, a), 0.0)


def gram(values_a: np.ndarray, values_b: np.ndarray, grid: Grid) -> np.ndarray:
    """Matrix of pairwise L2 inner products between rows of two value arrays."""
    return (np.asarray(values_a) * grid.weights) @ np.asarray(values_b).T


def row_norm_sq(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Squared L2 norm of every row of ``values`` (shape ``(..., m)``)."""
    values = np.asarray(values)
    return np.maximum((values * values) @ grid.weights, 0.0)


def basis_values(kind: BasisKind, j: int, t: np.ndarray) -> np.ndarray:
    """The ``j``-th orthonormal basis function at ``t`` (no grid checks)."""
    if j < 0:
        raise ValueError("basis index must be nonnegative")
    t = np.asarray(t, dtype=float)
    if kind == "legendre":
        return _shifted_legendre(j, t)
    if kind == "fourier":
        if j == 0:
            return np.ones_like(t)
        k = (j + 1) // 2
        trig = np.sin if j % 2 else np.cos
        return np.sqrt(2.0) * trig(2.0 * np.pi * k * t)
    raise ValueError(f"unknown basis kind {kind!r}")


def evaluate_basis(kind: BasisKind, j: int, grid: Grid) -> FunctionalSample:
    """Sample basis function ``j`` on ``grid``.

    Legendre functions are ``sqrt(2j+1) P_j(2t - 1)``.  The Fourier ordering is
    ``1, sqrt2 sin 2 pi t, sqrt2 cos 2 pi t, sqrt2 sin 4 pi t, ...`` so the
    constant component is index 0.
    """
    return FunctionalSample(grid, basis_values(kind, j, grid.points))


def basis_matrix(kind: BasisKind, p: int, grid: Grid) -> np.ndarray:
    """Array of shape ``(p, m)`` whose rows are the first ``p`` basis functions."""
    return np.stack([basis_values(kind, j, grid.points) for j in range(p)])


def _check_resolution(grid: Grid, p: int) -> None:
    if p < 1:
        raise ValueError("truncation p must be >= 1")
    if len(grid) < 8 * p:
        raise GridTooCoarse(f"grid of {len(grid)} points is too coarse for p={p} (need >= {8 * p})")


def project(a: FunctionalSample, kind: BasisKind, p: int) -> np.ndarray:
    """Coefficients ``<a, phi_j>`` for ``j < p``."""
    _check_resolution(a.grid, p)
    return basis_matrix(kind, p, a.grid) @ (a.grid.weights * a.values)


def project_values(values: np.ndarray, grid: Grid, kind: BasisKind, p: int) -> np.ndarray:
    """Vectorised :func:`project` over the rows of ``values``; returns shape ``(n, p)``."""
    _check_resolution(grid, p)
    return (np.asarray(values) * grid.weights) @ basis_matrix(kind, p, grid).T


def reconstruct(coefficients: Sequence[float], kind: BasisKind, grid: Grid) -> FunctionalSample:
    c = np.asarray(coefficients, dtype=float)
    return FunctionalSample(grid, c @ basis_matrix(kind, c.size, grid))


@dataclass(frozen=True, eq=False)
class BasisExpansion:
    """Truncated basis loadings for a batch of samples (one row per sample)."""

    kind: BasisKind
    coefficients: np.ndarray

    @property
    def p(self) -> int:
        return self.coefficients.shape[-1]

    @classmethod
    def fit(cls, values: np.ndarray, grid: Grid, kind: BasisKind, p: int) -> "BasisExpansion":
        coef = np.atleast_2d(project_values(values, grid, kind, p))
        coef.setflags(write=False)
        return cls(kind, coef)

    def reconstruct(self, grid: Grid) -> np.ndarray:
        return self.coefficients @ basis_matrix(self.kind, self.p, grid)
