"""Trace-covariogram / trace-variogram models built from Gaussian components.

The trace covariogram is ``tr c(d) = sum_k sill_k exp(-|d|^2 / range_k^2)`` and
the implied trace variogram is ``tr nu 1{d != 0} + sum_k sill_k (1 - exp(...))``.
Derivatives with respect to the lag are analytic.  Parameters are estimated
from empirical clouds of pairwise functional distances (or inner products) by
box-bounded trust-region least squares on log-parameters, wrapped in
Cressie's iterated weighted least squares.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateCloud, FitFailed, InputError, InsufficientData
from .fdata import Grid, gram, row_norm_sq

log = logging.getLogger(__name__)

CloudKind = Literal["variogram", "covariogram"]


@dataclass(frozen=True)
class GaussianComponent:
    sill: float
    range: float

    def __post_init__(self):
        if not (np.isfinite(self.sill) and self.sill >= 0):
            raise ValueError(f"sill must be finite and >= 0, got {self.sill}")
        if not (np.isfinite(self.range) and self.range > 0):
            raise ValueError(f"range must be finite and > 0, got {self.range}")


@dataclass(frozen=True)
class CovarianceModel:
    """Nugget trace plus a nonempty sum of Gaussian components."""

    nugget_trace: float
    components: tuple[GaussianComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a covariance model needs at least one Gaussian component")
        if not (np.isfinite(self.nugget_trace) and self.nugget_trace >= 0):
            raise ValueError(f"nugget trace must be finite and >= 0, got {self.nugget_trace}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, nugget: float, sills: Sequence[float], ranges: Sequence[float]) -> "CovarianceModel":
        return cls(float(nugget), tuple(GaussianComponent(float(s), float(r)) for s, r in zip(sills, ranges)))

    @property
    def sills(self) -> np.ndarray:
        return np.array([c.sill for c in self.components])

    @property
    def ranges(self) -> np.ndarray:
        return np.array([c.range for c in self.components])

    @property
    def sill(self) -> float:
        """Variogram sill of the smooth part, ``gamma_0(inf) = tr c(0)``."""
        return float(self.sills.sum())

    def scaled(self, k: float) -> "CovarianceModel":
        return CovarianceModel.from_arrays(self.nugget_trace * k, self.sills * k, self.ranges)

    def to_dict(self) -> dict:
        return {
            "nugget_trace": self.nugget_trace,
            "components": [{"sill": c.sill, "range": c.range} for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceModel":
        try:
            comps = d["components"]
            return cls.from_arrays(d["nugget_trace"], [c["sill"] for c in comps], [c["range"] for c in comps])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid covariance model: {exc}") from None


def _sq_dist(lag: np.ndarray) -> np.ndarray:
    lag = np.asarray(lag, dtype=float)
    return np.einsum("...d,...d->...", lag, lag)


def cov_of_distance(model: CovarianceModel, dist: np.ndarray) -> np.ndarray:
    """``tr c`` as a function of the lag length."""
    d2 = np.asarray(dist, dtype=float) ** 2
    return sum(c.sill * np.exp(-d2 / c.range**2) for c in model.components)


def variogram_of_distance(model: CovarianceModel, dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    nugget = np.where(dist != 0, model.nugget_trace, 0.0)
    return nugget + model.sill - cov_of_distance(model, dist)


def trace_cov(model: CovarianceModel, lag) -> np.ndarray | float:
    """``tr c(lag)`` for lag vectors of shape ``(..., 2)``."""
    d2 = _sq_dist(lag)
    out = sum(c.sill * np.exp(-d2 / c.range**2) for c in model.components)
    return float(out) if np.ndim(out) == 0 else out


def variogram(model: CovarianceModel, lag) -> np.ndarray | float:
    lag = np.asarray(lag, dtype=float)
    out = variogram_of_distance(model, np.sqrt(_sq_dist(lag)))
    return float(out) if np.ndim(out) == 0 else out


def grad_trace_cov(model: CovarianceModel, lag) -> np.ndarray:
    """Gradient of ``tr c`` with respect to the lag, shape ``(..., 2)``."""
    lag = np.asarray(lag, dtype=float)
    d2 = _sq_dist(lag)[..., None]
    return sum(-(2.0 * c.sill / c.range**2) * np.exp(-d2 / c.range**2) * lag for c in model.components)


def hess_trace_cov(model: CovarianceModel, lag) -> np.ndarray:
    """Hessian of ``tr c`` with respect to the lag, shape ``(..., 2, 2)``."""
    lag = np.asarray(lag, dtype=float)
    d2 = _sq_dist(lag)[..., None, None]
    outer = lag[..., :, None] * lag[..., None, :]
    eye = np.eye(2)
    return sum(
        c.sill * np.exp(-d2 / c.range**2) * ((4.0 / c.range**4) * outer - (2.0 / c.range**2) * eye)
        for c in model.components
    )


def covariance_matrix(model: CovarianceModel, locations: np.ndarray) -> np.ndarray:
    """``C_ij = tr c(s_i - s_j)`` (no nugget)."""
    s = np.asarray(locations, dtype=float)
    return trace_cov(model, s[:, None, :] - s[None, :, :])


# ---------------------------------------------------------------------------
# empirical clouds


@dataclass(frozen=True, eq=False)
class EmpiricalCloud:
    """Pairwise lag vectors and values for ``i < j``.

    For covariogram clouds ``zero_lag`` holds the mean of ``|Y_i - mu|^2``
    (with ``zero_lag_count`` terms); it is the only datum that separates the
    nugget from the smooth part.
    """

    lags: np.ndarray
    values: np.ndarray
    kind: CloudKind
    zero_lag: float | None = None
    zero_lag_count: int = 0

    def __post_init__(self):
        lags = np.array(self.lags, dtype=float).reshape(-1, 2)
        values = np.array(self.values, dtype=float).reshape(-1)
        if lags.shape[0] != values.size:
            raise ValueError("lags and values must have the same length")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(lags)):
            raise ValueError("cloud entries must be finite")
        if self.kind == "variogram" and np.any(values < 0):
            raise ValueError("variogram cloud values must be nonnegative")
        if self.kind not in ("variogram", "covariogram"):
            raise ValueError(f"unknown cloud kind {self.kind!r}")
        for arr in (lags, values):
            arr.setflags(write=False)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)

    @property
    def distances(self) -> np.ndarray:
        return np.hypot(self.lags[:, 0], self.lags[:, 1])

    def __len__(self) -> int:
        return self.values.size


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def _check_inputs(values: np.ndarray, locations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    if values.shape[0] != locations.shape[0]:
        raise InputError(f"{values.shape[0]} samples but {locations.shape[0]} locations")
    if locations.shape[0] < 3:
        raise InsufficientData(f"need at least 3 locations, got {locations.shape[0]}")
    return values, locations


def empirical_variogram_cloud(values: np.ndarray, locations: np.ndarray, grid: Grid) -> EmpiricalCloud:
    """Half squared L2 distances ``|Y_i - Y_j|^2 / 2`` for every pair ``i < j``.

    ``values`` is the ``(n, m)`` array of samples on ``grid``.
    """
    values, locations = _check_inputs(values, locations)
    i, j = _pair_indices(len(values))
    g = gram(values, values, grid)
    sq = np.diag(g)
    half = np.maximum(0.5 * (sq[i] + sq[j] - 2.0 * g[i, j]), 0.0)
    # exact path for identical rows, where the expanded form leaves rounding noise
    same = np.all(values[i] == values[j], axis=1)
    half[same] = 0.0
    return EmpiricalCloud(locations[i] - locations[j], half, "variogram")


def empirical_covariogram_cloud(
    values: np.ndarray, locations: np.ndarray, grid: Grid, mean: np.ndarray
) -> EmpiricalCloud:
    """Inner products ``<Y_i - mu, Y_j - mu>`` for every pair ``i < j``."""
    values, locations = _check_inputs(values, locations)
    centred = values - np.asarray(mean, dtype=float)
    i, j = _pair_indices(len(values))
    g = gram(centred, centred, grid)
    zero = float(row_norm_sq(centred, grid).mean())
    return EmpiricalCloud(locations[i] - locations[j], g[i, j], "covariogram", zero, len(values))


@dataclass(frozen=True)
class BinnedCloud:
    """Isotropic summary used by the fitter: mean distance, mean value and count per bin."""

    distances: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    kind: CloudKind

    def to_rows(self) -> list[tuple[float, float, int]]:
        return [(float(d), float(v), int(c)) for d, v, c in zip(self.distances, self.values, self.counts)]


def bin_cloud(cloud: EmpiricalCloud, n_bins: int | None = 15, max_distance: float | None = None) -> BinnedCloud:
    """Restrict to lags shorter than ``max_distance`` and optionally bin.

    ``max_distance`` defaults to half the largest lag in the cloud.  With
    ``n_bins=None`` every pair is kept as its own point (count 1).
    """
    dist = cloud.distances
    if dist.size == 0:
        raise DegenerateCloud("empty cloud")
    if max_distance is None:
        max_distance = dist.max() / 2.0
    keep = dist < max_distance
    d, v = dist[keep], cloud.values[keep]
    if d.size == 0:
        raise DegenerateCloud("no pairs closer than half the maximum distance")
    if n_bins is None:
        order = np.lexsort((v, d))
        out_d, out_v, out_c = d[order], v[order], np.ones(d.size, dtype=int)
    else:
        edges = np.linspace(0.0, max_distance, n_bins + 1)
        which = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, n_bins - 1)
        counts = np.bincount(which, minlength=n_bins)
        # sort within bins before summing so the result does not depend on pair order
        order = np.lexsort((v, d, which))
        sums_d = np.zeros(n_bins)
        sums_v = np.zeros(n_bins)
        np.add.at(sums_d, which[order], d[order])
        np.add.at(sums_v, which[order], v[order])
        nz = counts > 0
        out_d, out_v, out_c = sums_d[nz] / counts[nz], sums_v[nz] / counts[nz], counts[nz]
    if cloud.kind == "covariogram" and cloud.zero_lag is not None and cloud.zero_lag_count > 0:
        out_d = np.r_[0.0, out_d]
        out_v = np.r_[cloud.zero_lag, out_v]
        out_c = np.r_[cloud.zero_lag_count, out_c]
    return BinnedCloud(out_d, out_v, out_c.astype(int), cloud.kind)


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitOptions:
    n_bins: int | None = 15
    max_iter: int = 20
    rel_tol: float = 1e-6
    restarts: int = 5
    seed: int = 0


@dataclass
class FitResult:
    model: CovarianceModel
    binned: BinnedCloud
    objective: float
    iterations: int
    diagnostics: list[dict] = field(default_factory=list)


def _unpack(theta: np.ndarray, k: int) -> tuple[float, np.ndarray, np.ndarray]:
    p = np.exp(np.clip(theta, -60.0, 60.0))
    return p[0], p[1 : 1 + k], p[1 + k :]


def _model_curve(theta: np.ndarray, k: int, d: np.ndarray, kind: CloudKind) -> np.ndarray:
    nugget, sills, ranges = _unpack(theta, k)
    corr = np.exp(-(d[:, None] ** 2) / ranges[None, :] ** 2)
    if kind == "variogram":
        return np.where(d > 0, nugget, 0.0) + (sills * (1.0 - corr)).sum(axis=1)
    return np.where(d == 0, nugget, 0.0) + (sills * corr).sum(axis=1)


def _model_jacobian(theta: np.ndarray, k: int, d: np.ndarray, kind: CloudKind) -> np.ndarray:
    """Derivative of :func:`_model_curve` with respect to the log-parameters."""
    nugget, sills, ranges = _unpack(theta, k)
    u = d[:, None] ** 2 / ranges[None, :] ** 2
    corr = np.exp(-u)
    jac = np.empty((d.size, 1 + 2 * k))
    if kind == "variogram":
        jac[:, 0] = np.where(d > 0, nugget, 0.0)
        jac[:, 1 : 1 + k] = sills * (1.0 - corr)
        jac[:, 1 + k :] = -2.0 * sills * corr * u
    else:
        jac[:, 0] = np.where(d == 0, nugget, 0.0)
        jac[:, 1 : 1 + k] = sills * corr
        jac[:, 1 + k :] = 2.0 * sills * corr * u
    return jac


def _iwls_weights(theta: np.ndarray, k: int, b: BinnedCloud) -> np.ndarray:
    model = _model_curve(theta, k, b.distances, b.kind)
    if b.kind == "variogram":
        # Cressie: N(h) / gamma(h)^2
        denom = model**2
    else:
        # variance of a product of correlated Gaussians, var(XY) ~ c(0)^2 + c(h)^2
        c0 = _model_curve(theta, k, np.zeros(1), b.kind)[0]
        denom = c0**2 + model**2
    floor = 1e-12 * max(float(np.max(np.abs(b.values))), 1e-300) ** 2
    return b.counts / np.maximum(denom, floor)


def _criterion(theta, k, b, weights) -> float:
    r = _model_curve(theta, k, b.distances, b.kind) - b.values
    return float(np.sum(weights * r * r))


def _initial_theta(b: BinnedCloud, k: int, max_lag: float) -> np.ndarray:
    d, v = b.distances, b.values
    pos = d > 0
    mean_v = float(np.average(np.abs(v[pos]), weights=b.counts[pos]))
    nugget = 0.1 * mean_v
    if b.kind == "variogram":
        far = d >= np.quantile(d[pos], 2.0 / 3.0)
        sill = float(np.average(v[far], weights=b.counts[far])) - nugget
    else:
        near = pos & (d <= np.quantile(d[pos], 1.0 / 3.0))
        sill = float(np.average(v[near], weights=b.counts[near]))
    sill = max(sill, 0.1 * mean_v)
    if k == 1:
        ranges = np.array([max_lag / np.sqrt(40.0)])
    else:
        ranges = np.geomspace(max_lag / 20.0, max_lag / 2.0, k)
    return np.log(np.r_[nugget, np.full(k, sill / k), ranges])


def _log_bounds(k: int, max_lag: float) -> tuple[np.ndarray, np.ndarray]:
    # values are pre-scaled to max |v| = 1; ranges beyond the data window or far
    # below the smallest lags are unidentifiable and only degrade conditioning
    lo = np.r_[np.log(1e-6), np.full(k, np.log(1e-8)), np.full(k, np.log(max_lag / 200.0))]
    hi = np.r_[np.log(1e2), np.full(k, np.log(1e2)), np.full(k, np.log(max_lag))]
    return lo, hi


def _fit_from(theta0, k: int, b: BinnedCloud, opts: FitOptions, bounds) -> tuple[np.ndarray, int, float]:
    lo, hi = bounds
    theta = np.clip(theta0, lo + 1e-9, hi - 1e-9)
    weights = b.counts.astype(float)
    it = 0
    for it in range(1, opts.max_iter + 1):
        sw = np.sqrt(weights)

        def resid(t, sw=sw):
            return sw * (_model_curve(t, k, b.distances, b.kind) - b.values)

        def jac(t, sw=sw):
            return sw[:, None] * _model_jacobian(t, k, b.distances, b.kind)

        sol = least_squares(
            resid, theta, jac=jac, bounds=(lo, hi), method="trf", xtol=1e-10, ftol=1e-10, gtol=1e-10, max_nfev=200
        )
        new = sol.x
        if not np.all(np.isfinite(new)):
            raise FloatingPointError("non-finite parameters")
        change = np.max(np.abs(np.expm1(new - theta)))
        theta = new
        weights = _iwls_weights(theta, k, b)
        if change < opts.rel_tol:
            break
    return theta, it, _criterion(theta, k, b, _iwls_weights(theta, k, b))


def fit(cloud: EmpiricalCloud, n_components: int = 1, options: FitOptions | None = None) -> FitResult:
    """Fit a nugget plus ``n_components`` Gaussian terms to ``cloud``.

    Only pairs closer than half the maximum pairwise distance are used.  The
    first IWLS pass uses the bin counts as weights; later passes use Cressie's
    ``N / gamma^2`` (covariogram clouds use ``N / (c(0)^2 + c^2)``).  The
    start with the smallest final weighted criterion wins.

    Raises
    ------
    DegenerateCloud
        If nothing survives the distance filter or every value is zero.
    FitFailed
        If no start produced finite parameters.
    """
    opts = options or FitOptions()
    k = n_components
    if k < 1:
        raise ValueError("n_components must be >= 1")
    binned = bin_cloud(cloud, opts.n_bins)
    if not np.any(binned.values != 0):
        raise DegenerateCloud("all cloud values are zero")
    if np.count_nonzero(binned.distances > 0) == 0:
        raise DegenerateCloud("no nonzero lags in cloud")

    scale = float(np.max(np.abs(binned.values)))
    scaled = BinnedCloud(binned.distances, binned.values / scale, binned.counts, binned.kind)
    max_lag = float(cloud.distances.max())
    theta0 = _initial_theta(scaled, k, max_lag)
    rng = np.random.default_rng(opts.seed)
    starts = [theta0] + [theta0 + rng.normal(0.0, 0.5, theta0.size) for _ in range(opts.restarts)]
    bounds = _log_bounds(k, max_lag)

    best = None
    diagnostics = []
    for s, start in enumerate(starts):
        try:
            theta, iters, crit = _fit_from(start, k, scaled, opts, bounds)
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            diagnostics.append({"start": s, "error": str(exc)})
            continue
        diagnostics.append({"start": s, "criterion": crit, "iterations": iters})
        if np.isfinite(crit) and (best is None or crit < best[2]):
            best = (theta, iters, crit)
    if best is None:
        raise FitFailed("variogram fit failed from every start", diagnostics)

    theta, iters, crit = best
    nugget, sills, ranges = _unpack(theta, k)
    order = np.argsort(ranges, kind="stable")
    model = CovarianceModel.from_arrays(nugget * scale, sills[order] * scale, ranges[order])
    log.debug("fitted %s with criterion %.3g after %d IWLS passes", model, crit, iters)
    return FitResult(model, binned, crit, iters, diagnostics)


def fit_model(cloud: EmpiricalCloud, n_components: int = 1, **kwargs) -> CovarianceModel:
    """Shorthand returning only the fitted :class:`CovarianceModel`."""
    return fit(cloud, n_components, FitOptions(**kwargs)).model
