"""Simulation study: a true boundary against a null boundary.

Locations are uniform on the unit square.  Ten Legendre loadings are drawn with
component covariance ``(nu_j I + sigma_j exp(-|d|^2 / rho_j^2)) / j^2``.  A
"mean-like" boundary adds a forcing term to the loading mean; a
"covariance-like" boundary lifts the locations into 3-D with the same forcing
term as height, which decorrelates observations on either side.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .bayes import BayesConfig, ChainConfig, functional_bayes_womble
from .bootstrap import BootstrapConfig, pseudo_p_many, wald_halfwidth
from .covmodel import FitOptions, empirical_variogram_cloud, fit
from .fdata import Grid, basis_matrix
from .geometry import Curve, QuadratureRule
from .womble import SpatialDataset

log = logging.getLogger(__name__)

BoundaryKind = Literal["mean_like", "covariance_like"]

NULL_SEGMENT = ((0.25, 0.4), (0.25, 0.6))
TRUE_SEGMENT = ((0.75, 0.25), (0.75, 0.75))
DEFAULT_F_VALUES = (0.0, 0.5, 1.0, 2.0, 5.0)


def boundary_pair() -> tuple[Curve, Curve]:
    """The (null, true) segments, both traversed upwards with right normals."""
    return (
        Curve.segment(*NULL_SEGMENT, orientation="right", name="null"),
        Curve.segment(*TRUE_SEGMENT, orientation="right", name="true"),
    )


def mean_forcing(s, f: float, side: Literal["left", "right"]) -> np.ndarray | float:
    """One case of the boundary forcing at locations ``s`` (shape ``(..., 2)``).

    ``left`` is the strip around the null segment (x = 1/4), ``right`` the strip
    around the true segment (x = 3/4).
    """
    s = np.asarray(s, dtype=float)
    x, y = s[..., 0], s[..., 1]
    if side == "left":
        cx, half_height, y_freq = 0.25, 0.1, 5.0
    elif side == "right":
        cx, half_height, y_freq = 0.75, 0.25, 2.0
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    inside = (np.abs(x - cx) < 0.25) & (np.abs(y - 0.5) < half_height)
    value = (
        np.sign(x - cx)
        * np.cos(2.0 * np.pi * (x - cx)) ** 2
        * np.tanh(5.0 * np.cos(y_freq * np.pi * (y - 0.5)) ** 2)
    )
    out = f * np.where(inside, value, 0.0)
    return float(out) if out.ndim == 0 else out


def location_mean(s, f: float, sides: Sequence[str] = ("right",)) -> np.ndarray:
    """Forcing summed over ``sides``.

    The default forces only the true boundary, leaving the null segment in a
    stationary region.  ``("left", "right")`` adds both cases; their supports
    are disjoint.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape[:-1])
    for side in sides:
        out = out + mean_forcing(s, f, side)
    return out


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    n_basis: int = 10
    boundary_kind: BoundaryKind = "mean_like"
    f: float = 0.0
    seed: int = 0
    grid_size: int = 101
    forcing_sides: tuple[str, ...] = ("right",)

    def __post_init__(self):
        if any(side not in ("left", "right") for side in self.forcing_sides):
            raise ValueError(f"forcing sides must be 'left' or 'right', got {self.forcing_sides!r}")
        if self.f < 0:
            raise ValueError("boundary factor f must be >= 0")
        if self.boundary_kind not in ("mean_like", "covariance_like"):
            raise ValueError(f"unknown boundary kind {self.boundary_kind!r}")


@dataclass
class GroundTruth:
    nuggets: np.ndarray
    sills: np.ndarray
    ranges: np.ndarray
    loading_mean: np.ndarray
    loadings: np.ndarray
    heights: np.ndarray


def component_covariance(locations, nugget: float, sill: float, rng_: float, j: int, heights=None) -> np.ndarray:
    """Covariance of loading ``j`` (1-based) over the given locations."""
    pts = np.asarray(locations, dtype=float)
    if heights is not None:
        pts = np.column_stack([pts, heights])
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijd,ijd->ij", diff, diff)
    cov = (sill / j**2) * np.exp(-d2 / rng_**2)
    cov[np.diag_indices_from(cov)] += nugget / j**2
    return cov


def generate(config: SimConfig) -> tuple[SpatialDataset, GroundTruth]:
    """Draw one dataset; the known mean is the zero function.

    Random draws are taken in a fixed order (locations, nuggets, sills, ranges,
    innovations) that does not depend on ``f`` or the boundary kind, so the
    same seed gives coupled datasets across those settings.
    """
    rng = np.random.default_rng(config.seed)
    p = config.n_basis
    locations = rng.random((config.n, 2))
    nuggets = rng.uniform(0.05, 0.15, p)
    sills = rng.uniform(0.8, 1.2, p)
    ranges = rng.uniform(0.4, 0.6, p)
    innovations = rng.standard_normal((p, config.n))

    forcing = location_mean(locations, config.f, config.forcing_sides)
    if config.boundary_kind == "mean_like":
        mu, heights = forcing, None
    else:
        mu, heights = np.zeros(config.n), forcing
    loadings = np.empty((config.n, p))
    for j in range(1, p + 1):
        cov = component_covariance(locations, nuggets[j - 1], sills[j - 1], ranges[j - 1], j, heights)
        factor = np.linalg.cholesky(cov)
        loadings[:, j - 1] = mu + factor @ innovations[j - 1]

    grid = Grid.uniform(config.grid_size)
    values = loadings @ basis_matrix("legendre", p, grid)
    data = SpatialDataset(locations, values, grid, known_mean=np.zeros(len(grid)))
    truth = GroundTruth(
        nuggets, sills, ranges, mu, loadings, np.zeros(config.n) if heights is None else heights
    )
    return data, truth


# ---------------------------------------------------------------------------
# methods and experiment


@dataclass(frozen=True)
class MethodSpec:
    """``nonparametric`` with ``size`` Gaussian terms, or ``bayes`` with ``size`` loadings."""

    kind: Literal["nonparametric", "bayes"]
    size: int

    @classmethod
    def parse(cls, text: str) -> "MethodSpec":
        name, _, size = text.partition(":")
        name = name.strip().lower()
        if name not in ("nonparametric", "bayes"):
            raise ValueError(f"unknown method {text!r}")
        default = 1 if name == "nonparametric" else 3
        try:
            k = int(size) if size else default
        except ValueError:
            raise ValueError(f"bad method size in {text!r}") from None
        if k < 1:
            raise ValueError(f"method size must be positive in {text!r}")
        return cls(name, k)

    def __str__(self) -> str:
        return f"{self.kind}:{self.size}"


@dataclass(frozen=True)
class ExperimentSettings:
    boundary_kind: BoundaryKind = "mean_like"
    n: int = 100
    B: int = 200
    nodes_per_segment: int = 16
    chain: ChainConfig = field(default_factory=ChainConfig)


@dataclass(frozen=True)
class ReplicateOutcome:
    method: str
    chose_true: bool
    tie: bool
    statistic_true: float
    statistic_null: float


@dataclass(frozen=True)
class ExperimentRow:
    f: float
    method: str
    boundary_kind: str
    prob_true_chosen: float
    ci_halfwidth: float
    replicates: int
    ties: int

    def as_csv_row(self) -> list:
        return [
            repr(float(self.f)),
            self.method,
            self.boundary_kind,
            f"{self.prob_true_chosen:.6f}",
            f"{self.ci_halfwidth:.6f}",
            self.replicates,
        ]


EXPERIMENT_HEADER = ["f", "method", "boundary_kind", "prob_true_chosen", "ci_halfwidth", "replicates"]


def replicate_seeds(seed: int, rep: int) -> dict[str, int]:
    """Independent integer seeds for one replicate's data, bootstrap, chains and tie-breaks."""
    children = np.random.SeedSequence([seed, rep]).spawn(4)
    names = ("data", "bootstrap", "chain", "ties")
    return {k: int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for k, c in zip(names, children)}


def _nonparametric(data, curves, k, settings, seeds, tie_rng) -> ReplicateOutcome:
    cloud = empirical_variogram_cloud(data.values, data.locations, data.grid)
    model = fit(cloud, k, FitOptions(seed=seeds["bootstrap"] % 2**32)).model
    out = pseudo_p_many(
        data, model, curves, QuadratureRule(settings.nodes_per_segment), BootstrapConfig(settings.B, seeds["bootstrap"])
    )
    p_null, p_true = out[0].pseudo_p, out[1].pseudo_p
    tie = p_null == p_true
    chose = bool(tie_rng.random() < 0.5) if tie else p_true < p_null
    return ReplicateOutcome(f"nonparametric:{k}", chose, tie, p_true, p_null)


def _bayesian(data, curves, p, settings, seeds, tie_rng) -> ReplicateOutcome:
    cfg = BayesConfig(p=p, chain=settings.chain, nodes_per_segment=settings.nodes_per_segment, seed=seeds["chain"])
    report = functional_bayes_womble(data, p, curves, cfg)
    s_null, s_true = report.scores
    tie = s_null == s_true
    chose = bool(tie_rng.random() < 0.5) if tie else s_true > s_null
    return ReplicateOutcome(f"bayes:{p}", chose, tie, s_true, s_null)


def run_replicate(
    f: float, rep: int, methods: Sequence[MethodSpec], settings: ExperimentSettings, seed: int = 0
) -> list[ReplicateOutcome]:
    """Apply every method to one shared dataset; ties are broken by a seeded coin."""
    seeds = replicate_seeds(seed, rep)
    data, _ = generate(SimConfig(n=settings.n, boundary_kind=settings.boundary_kind, f=f, seed=seeds["data"]))
    curves = boundary_pair()
    tie_rng = np.random.default_rng(seeds["ties"])
    out = []
    for m in methods:
        runner = _nonparametric if m.kind == "nonparametric" else _bayesian
        res = runner(data, curves, m.size, settings, seeds, tie_rng)
        if res.tie:
            log.info("tie for %s at f=%s replicate %d; broken at random", m, f, rep)
        out.append(res)
    return out


def _replicate_task(args):
    f, rep, methods, settings, seed = args
    return run_replicate(f, rep, methods, settings, seed)


def run_experiment(
    f_values: Iterable[float] = DEFAULT_F_VALUES,
    methods: Sequence[MethodSpec | str] = ("nonparametric:1", "bayes:3"),
    replicates: int = 200,
    settings: ExperimentSettings | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[ExperimentRow]:
    """Probability of choosing the true boundary for each ``(f, method)``.

    The nonparametric method picks the curve with the smaller pseudo-p value,
    the Bayesian method the curve with the larger standardised score.  Replicate
    ``r`` uses the same underlying random draws for every ``f``.
    """
    settings = settings or ExperimentSettings()
    methods = [m if isinstance(m, MethodSpec) else MethodSpec.parse(m) for m in methods]
    f_values = [float(f) for f in f_values]
    tasks = [(f, rep, methods, settings, seed) for f in f_values for rep in range(replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))))
    else:
        results = [_replicate_task(t) for t in tasks]

    rows = []
    for fi, f in enumerate(f_values):
        block = results[fi * replicates : (fi + 1) * replicates]
        for mi, m in enumerate(methods):
            chosen = np.array([r[mi].chose_true for r in block], dtype=float)
            ties = int(sum(r[mi].tie for r in block))
            prob = float(chosen.mean()) if replicates else float("nan")
            rows.append(
                ExperimentRow(f, str(m), settings.boundary_kind, prob, wald_halfwidth(prob, replicates), replicates, ties)
            )
    return rows
