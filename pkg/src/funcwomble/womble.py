"""Best linear unbiased prediction of the normalised functional wombling measure.

For a curve ``C`` the predictor is ``sum_i w_i Y_i`` where the weights solve

    (C + tr(nu) I) w - b = -(lambda / 2) 1,   1^T w = 0        (unknown mean)
    (C + tr(nu) I) w = b                                       (known mean, data centred)

with ``C_ij = tr c(s_i - s_j)`` and ``b_i`` the arc-length-averaged normal
component of the covariogram gradient along ``C``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve

from ._linalg import cholesky_jitter
from .covmodel import CovarianceModel, covariance_matrix, grad_trace_cov
from .errors import InputError
from .fdata import FunctionalSample, Grid, row_norm_sq
from .geometry import Curve, QuadratureRule, average_flux


@dataclass(frozen=True, eq=False)
class SpatialDataset:
    """Functional observations ``values[i]`` (on ``grid``) made at ``locations[i]``."""

    locations: np.ndarray
    values: np.ndarray
    grid: Grid
    known_mean: np.ndarray | None = None
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float)
        vals = np.array(self.values, dtype=float)
        if loc.ndim != 2 or loc.shape[1] != 2:
            raise InputError(f"locations must have shape (n, 2), got {loc.shape}")
        if vals.ndim != 2 or vals.shape != (loc.shape[0], len(self.grid)):
            raise InputError(
                f"values must have shape ({loc.shape[0]}, {len(self.grid)}), got {vals.shape}"
            )
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(vals))):
            raise InputError("locations and values must be finite")
        if len(np.unique(loc, axis=0)) != loc.shape[0]:
            raise InputError("observation locations must be pairwise distinct")
        for arr in (loc, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "values", vals)
        if self.known_mean is not None:
            mu = np.array(self.known_mean, dtype=float).reshape(-1)
            if mu.shape != (len(self.grid),) or not np.all(np.isfinite(mu)):
                raise InputError("known mean must be a finite function on the data grid")
            mu.setflags(write=False)
            object.__setattr__(self, "known_mean", mu)
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
            if len(self.ids) != loc.shape[0]:
                raise InputError("ids must match the number of locations")

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def samples(self) -> list[FunctionalSample]:
        return [FunctionalSample(self.grid, v) for v in self.values]

    @property
    def mean_known(self) -> bool:
        return self.known_mean is not None

    def centred(self) -> np.ndarray:
        """Values minus the known mean, or the raw values when the mean is unknown."""
        return self.values - self.known_mean if self.mean_known else np.asarray(self.values)

    def with_values(self, values: np.ndarray) -> "SpatialDataset":
        return SpatialDataset(self.locations, values, self.grid, self.known_mean, self.ids)


@dataclass(frozen=True, eq=False)
class WomblingResult:
    curve: str
    measure: FunctionalSample
    squared_norm: float
    weights: np.ndarray

    def to_dict(self, weights: bool = False, measure: bool = False) -> dict:
        out = {"curve": self.curve, "squared_norm": self.squared_norm}
        if weights:
            out["weights"] = self.weights.tolist()
        if measure:
            out["measure_grid"] = self.measure.grid.points.tolist()
            out["measure_values"] = self.measure.values.tolist()
        return out


def build_b(
    model: CovarianceModel, locations: np.ndarray, curve: Curve, rule: QuadratureRule | None = None
) -> np.ndarray:
    """``b_i = (1/|C|) int_C n(s)^T grad tr c(s - s_i) dl(s)`` for every location."""
    s = np.asarray(locations, dtype=float).reshape(-1, 2)
    return np.atleast_1d(
        average_flux(curve, rule, lambda pts: grad_trace_cov(model, pts[None, :, :] - s[:, None, :]))
    )


def system_matrix(model: CovarianceModel, locations: np.ndarray) -> np.ndarray:
    """``C + tr(nu) I``."""
    c = covariance_matrix(model, locations)
    return c + model.nugget_trace * np.eye(c.shape[0])


def solve_weights(
    c_matrix: np.ndarray, nugget_trace: float, b: np.ndarray, mean_known: bool
) -> tuple[np.ndarray, float | np.ndarray | None]:
    """Optimal BLUP weights.

    ``b`` may be a vector or an ``(n, K)`` array holding one right-hand side per
    curve.  Returns ``(w, lam)``; ``lam`` is the Lagrange multiplier of the
    zero-sum constraint, or ``None`` in the known-mean case.

    The constrained system is solved through the bordered KKT matrix
    ``[[M, 1], [1^T, 0]]`` with one step of iterative refinement.
    """
    c_matrix = np.asarray(c_matrix, dtype=float)
    b = np.asarray(b, dtype=float)
    n = c_matrix.shape[0]
    m = c_matrix + nugget_trace * np.eye(n)
    factor, jitter = cholesky_jitter(m, scale=float(np.max(np.diag(c_matrix))) or None)
    if jitter:
        m = m + jitter * np.eye(n)
    if mean_known:
        w = cho_solve((factor, True), b)
        w = w + cho_solve((factor, True), b - m @ w)
        return w, None
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = m
    kkt[:n, n] = kkt[n, :n] = 1.0
    rhs = np.concatenate([b, np.zeros((1,) + b.shape[1:])])
    sol = solve(kkt, rhs, assume_a="sym")
    sol = sol + solve(kkt, rhs - kkt @ sol, assume_a="sym")
    w, half_lam = sol[:n], sol[n]
    lam = 2.0 * half_lam
    return w, (float(lam) if np.ndim(lam) == 0 else lam)


class WombleBLUP:
    """Weights and predictions for several curves sharing one dataset and model.

    The system matrix is assembled once; each curve costs one right-hand side.
    """

    def __init__(self, data: SpatialDataset, model: CovarianceModel, rule: QuadratureRule | None = None):
        self.data = data
        self.model = model
        self.rule = rule or QuadratureRule()

    @cached_property
    def c_matrix(self) -> np.ndarray:
        return covariance_matrix(self.model, self.data.locations)

    def weights(self, curves: Curve | Sequence[Curve]) -> np.ndarray:
        single = isinstance(curves, Curve)
        curves = [curves] if single else list(curves)
        b = np.column_stack([build_b(self.model, self.data.locations, c, self.rule) for c in curves])
        w, _ = solve_weights(self.c_matrix, self.model.nugget_trace, b, self.data.mean_known)
        return w[:, 0] if single else w

    def predict(self, curves: Curve | Sequence[Curve]) -> WomblingResult | list[WomblingResult]:
        single = isinstance(curves, Curve)
        curves = [curves] if single else list(curves)
        w = self.weights(curves)
        measures = w.T @ self.data.centred()
        norms = row_norm_sq(measures, self.data.grid)
        out = [
            WomblingResult(c.name, FunctionalSample(self.data.grid, measures[k]), float(norms[k]), w[:, k].copy())
            for k, c in enumerate(curves)
        ]
        return out[0] if single else out


def predict_measure(
    data: SpatialDataset, model: CovarianceModel, curve: Curve, rule: QuadratureRule | None = None
) -> WomblingResult:
    """BLUP of the normalised functional wombling measure across ``curve``.

    With a known mean the predictor is ``sum_i w_i (Y_i - mu)``; otherwise the
    zero-sum weights are applied to the raw ``Y_i`` and the mean cancels.
    """
    return WombleBLUP(data, model, rule).predict(curve)
