"""Bayesian Gaussian-process wombling baseline.

Each basis loading ``alpha_j`` is modelled as an independent stationary
Gaussian field with covariance ``nu_j 1{i=i'} + sigma_j exp(-|d|^2 / rho_j^2)``.
Hyperparameters are sampled by random-walk Metropolis-Hastings on the log
scale under independent inverse-gamma priors.  For every retained draw the
wombling measures across the requested curves are jointly Gaussian with

    mean = b^T Sigma^{-1} (alpha - mu)
    cov  = -(1/|C||C'|) int int n^T H sigma(s - s') n' dl dl'  -  b^T Sigma^{-1} b'

where ``b`` holds the curve-averaged normal gradients of the covariance
(the same vector as the BLUP right-hand side).  One joint sample per draw is
squared and summed over components to give posterior draws of the truncated
squared norm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dtrtrs
from scipy.special import gammaln

from ._linalg import cholesky_jitter
from .covmodel import CovarianceModel, GaussianComponent, hess_trace_cov
from .errors import ChainStuck, InputError
from .fdata import project_values
from .geometry import Curve, QuadratureRule, quadrature_nodes
from .womble import SpatialDataset, build_b

log = logging.getLogger(__name__)

PARAM_NAMES = ("nugget", "sill", "range")


@dataclass(frozen=True)
class HyperParams:
    """Covariance parameters of one loading field."""

    nugget: float
    sill: float
    range: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def as_model(self) -> CovarianceModel:
        return CovarianceModel(self.nugget, (GaussianComponent(self.sill, self.range),))

    @classmethod
    def from_array(cls, a) -> "HyperParams":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class InverseGammaPrior:
    """Independent inverse-gamma prior on every hyperparameter."""

    shape: float = 2.0
    scale: float = 0.1

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.shape, self.scale
        with np.errstate(divide="ignore"):
            out = a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x
        return np.where(x > 0, out, -np.inf)

    def log_density_log(self, eta):
        """Log density of ``log x`` (includes the Jacobian)."""
        eta = np.asarray(eta, dtype=float)
        return -self.shape * eta - self.scale * np.exp(-eta)


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 5000
    burn_in: int = 2000
    thin: int = 5
    initial_step: float = 0.5
    adapt_every: int = 50
    target: tuple[float, float] = (0.2, 0.4)
    min_acceptance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must be in [0, n_iter)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class ChainResult:
    """Retained draws with shape ``(n_draws, p, 3)`` ordered (nugget, sill, range)."""

    draws: np.ndarray
    iterations: np.ndarray
    acceptance: np.ndarray
    step: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def params(self, d: int, j: int) -> HyperParams:
        return HyperParams.from_array(self.draws[d, j])

    def diagnostics_rows(self) -> list[tuple]:
        rows = []
        for d, it in enumerate(self.iterations):
            for j in range(self.draws.shape[1]):
                rows.append((int(it), j, *map(float, self.draws[d, j]), float(self.acceptance[j])))
        return rows


def _sq_distances(locations: np.ndarray) -> np.ndarray:
    s = np.asarray(locations, dtype=float).reshape(-1, 2)
    diff = s[:, None, :] - s[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


def _log_likelihoods(eta: np.ndarray, loadings: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Gaussian log-likelihood (up to a constant) of each column of ``loadings``."""
    p, n = eta.shape[0], d2.shape[0]
    if n == 0:
        return np.zeros(p)
    nugget, sill, rng_ = np.exp(eta).T
    cov = np.multiply(d2[None], (-1.0 / rng_**2)[:, None, None])
    np.exp(cov, out=cov)
    cov *= sill[:, None, None]
    cov.reshape(p, -1)[:, :: n + 1] += nugget[:, None]
    out = np.empty(p)
    try:
        factors = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        factors = None
    for j in range(p):
        if factors is None:
            try:
                factor = np.linalg.cholesky(cov[j])
            except np.linalg.LinAlgError:
                out[j] = -np.inf
                continue
        else:
            factor = factors[j]
        # factor.T is the Fortran-ordered upper factor; trans=1 solves with L itself
        z, _ = dtrtrs(factor.T, loadings[:, j], lower=0, trans=1)
        out[j] = -np.log(np.diagonal(factor)).sum() - 0.5 * z @ z
    return out


def mh_sample(
    loadings: np.ndarray,
    locations: np.ndarray,
    prior: InverseGammaPrior | None = None,
    config: ChainConfig | None = None,
) -> ChainResult:
    """Random-walk Metropolis-Hastings over ``log(nugget, sill, range)`` per component.

    ``loadings`` has shape ``(n, p)`` (or ``(n,)``) and must already be centred
    at the known loading mean.  Each component has its own chain and random
    stream, spawned from ``config.seed``, so component ``j`` gives the same
    chain whatever ``p`` is.  The proposal scale is tuned during burn-in
    towards an acceptance rate inside ``config.target``.

    Raises
    ------
    ChainStuck
        If a chain's post-burn-in acceptance rate is below ``config.min_acceptance``.
    """
    prior = prior or InverseGammaPrior()
    config = config or ChainConfig()
    loadings = np.asarray(loadings, dtype=float)
    if loadings.ndim == 1:
        loadings = loadings[:, None]
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    if loadings.shape[0] != locations.shape[0]:
        raise InputError("loadings and locations disagree on n")
    n, p = loadings.shape
    d2 = _sq_distances(locations)
    rngs = [np.random.default_rng(ss) for ss in np.random.SeedSequence(config.seed).spawn(p)]

    # start at the prior mean; the sill starts at the empirical variance when there is data
    start = np.full(3, prior.scale / (prior.shape - 1.0))
    eta = np.tile(np.log(start), (p, 1))
    if n:
        var = np.maximum(loadings.var(axis=0), 1e-12)
        eta[:, 1] = np.log(var)
        eta[:, 0] = np.log(0.1 * var)
    ll = _log_likelihoods(eta, loadings, d2)
    lp = prior.log_density_log(eta).sum(axis=1)
    step = np.full(p, config.initial_step)

    window = np.zeros(p)
    kept_accepts = np.zeros(p)
    n_keep = (config.n_iter - config.burn_in) // config.thin
    draws = np.empty((n_keep, p, 3))
    iterations = np.empty(n_keep, dtype=int)
    k = 0
    for it in range(config.n_iter):
        noise = np.stack([r.standard_normal(3) for r in rngs])
        log_u = np.log(np.array([r.random() for r in rngs]))
        prop = eta + step[:, None] * noise
        ll_prop = _log_likelihoods(prop, loadings, d2)
        lp_prop = prior.log_density_log(prop).sum(axis=1)
        accept = log_u < (ll_prop + lp_prop) - (ll + lp)
        eta = np.where(accept[:, None], prop, eta)
        ll = np.where(accept, ll_prop, ll)
        lp = np.where(accept, lp_prop, lp)
        if it < config.burn_in:
            window += accept
            if (it + 1) % config.adapt_every == 0:
                rate = window / config.adapt_every
                step = np.where(rate < config.target[0], step * 0.7, step)
                step = np.where(rate > config.target[1], step * 1.4, step)
                window[:] = 0
        else:
            kept_accepts += accept
            offset = it - config.burn_in
            if (offset + 1) % config.thin == 0 and k < n_keep:
                draws[k] = np.exp(eta)
                iterations[k] = it
                k += 1
    acceptance = kept_accepts / (config.n_iter - config.burn_in)
    stuck = acceptance < config.min_acceptance
    if np.any(stuck):
        raise ChainStuck(
            f"components {np.flatnonzero(stuck).tolist()} have acceptance {acceptance[stuck].round(4).tolist()}",
            acceptance,
        )
    return ChainResult(draws, iterations, acceptance, step)


# ---------------------------------------------------------------------------
# posterior of the wombling measures


def prior_measure_covariance(
    model: CovarianceModel, curves: Sequence[Curve], rule: QuadratureRule | None = None
) -> np.ndarray:
    """Covariance of the normalised wombling measures before seeing data.

    Entry ``(k, l)`` is ``-(1/|C_k||C_l|) int int n_k^T H(s - s') n_l dl dl'``,
    computed with the tensor product of the curve rules.
    """
    nodes = [quadrature_nodes(c, rule) for c in curves]
    K = len(nodes)
    out = np.empty((K, K))
    for a in range(K):
        for b in range(a, K):
            na, nb = nodes[a], nodes[b]
            hess = hess_trace_cov(model, na.points[:, None, :] - nb.points[None, :, :])
            val = np.einsum("qd,qrde,re,q,r->", na.normals, hess, nb.normals, na.weights, nb.weights)
            out[a, b] = out[b, a] = -val / (na.length * nb.length)
    return out


def posterior_wombling_moments(
    theta: HyperParams,
    loadings: np.ndarray,
    locations: np.ndarray,
    curves: Curve | Sequence[Curve],
    rule: QuadratureRule | None = None,
    mean: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and covariance matrix of the wombling measures.

    ``loadings`` is the length-``n`` vector of one loading field; ``mean`` is
    its known mean.  The covariance is symmetrised and its diagonal clamped at
    zero (values below ``-1e-8`` relative are reported as a warning).
    """
    if isinstance(curves, Curve):
        curves = [curves]
    model = theta.as_model()
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    z = np.asarray(loadings, dtype=float).reshape(-1) - mean
    prior_cov = prior_measure_covariance(model, curves, rule)
    if locations.shape[0] == 0:
        return np.zeros(len(curves)), prior_cov
    sigma = model.sill * np.exp(-_sq_distances(locations) / theta.range**2)
    sigma[np.diag_indices_from(sigma)] += theta.nugget
    factor, _ = cholesky_jitter(sigma, scale=theta.sill)
    b = np.column_stack([build_b(model, locations, c, rule) for c in curves])
    mean_vec = b.T @ cho_solve((factor, True), z)
    half = solve_triangular(factor, b, lower=True)
    cov = prior_cov - half.T @ half
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov)
    scale = max(float(np.max(np.abs(np.diag(prior_cov)))), 1e-300)
    if np.any(diag < -1e-8 * scale):
        log.warning("posterior wombling variance %.3g below zero; clamping", diag.min())
    cov[np.diag_indices_from(cov)] = np.maximum(diag, 0.0)
    return mean_vec, cov


class _MomentGeometry:
    """Lag geometry shared by every draw of a single-Gaussian covariance.

    Gives the same moments as :func:`posterior_wombling_moments`, but the
    curve/location lags are computed once so each draw costs a handful of
    exponentials and one Cholesky factorisation.
    """

    def __init__(self, locations: np.ndarray, curves: Sequence[Curve], rule: QuadratureRule | None):
        self.locations = np.asarray(locations, dtype=float).reshape(-1, 2)
        self.d2 = _sq_distances(self.locations)
        nodes = [quadrature_nodes(c, rule) for c in curves]
        self.b_terms = []
        for nd in nodes:
            lag = nd.points[None, :, :] - self.locations[:, None, :]
            self.b_terms.append(
                (np.einsum("iqd,iqd->iq", lag, lag), np.einsum("iqd,qd->iq", lag, nd.normals), nd.weights / nd.length)
            )
        K = len(nodes)
        self.pairs = []
        for a in range(K):
            for b in range(a, K):
                na, nb = nodes[a], nodes[b]
                lag = na.points[:, None, :] - nb.points[None, :, :]
                proj = np.einsum("qrd,qd->qr", lag, na.normals) * np.einsum("qrd,rd->qr", lag, nb.normals)
                self.pairs.append(
                    (
                        a,
                        b,
                        np.einsum("qrd,qrd->qr", lag, lag),
                        proj,
                        na.normals @ nb.normals.T,
                        np.outer(na.weights, nb.weights) / (na.length * nb.length),
                    )
                )
        self.K = K

    def moments(self, theta: HyperParams, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sill, r2 = theta.sill, theta.range**2
        prior = np.empty((self.K, self.K))
        for a, b, d2, proj, ndot, ww in self.pairs:
            val = np.sum(ww * sill * np.exp(-d2 / r2) * ((4.0 / r2**2) * proj - (2.0 / r2) * ndot))
            prior[a, b] = prior[b, a] = -val
        if self.locations.shape[0] == 0:
            return np.zeros(self.K), prior
        bvec = np.column_stack(
            [(-2.0 * sill / r2) * (np.exp(-d2 / r2) * nd) @ w for d2, nd, w in self.b_terms]
        )
        sigma = sill * np.exp(-self.d2 / r2)
        sigma[np.diag_indices_from(sigma)] += theta.nugget
        factor, _ = cholesky_jitter(sigma, scale=sill)
        mean = bvec.T @ cho_solve((factor, True), z)
        half = solve_triangular(factor, bvec, lower=True, check_finite=False)
        cov = prior - half.T @ half
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices_from(cov)] = np.maximum(np.diag(cov), 0.0)
        return mean, cov


def _sample_gaussian(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.maximum(vals, 0.0))
    return mean + root @ rng.standard_normal(mean.size)


@dataclass(frozen=True)
class BayesConfig:
    p: int = 3
    basis: str = "fourier"
    chain: ChainConfig = field(default_factory=ChainConfig)
    prior: InverseGammaPrior = field(default_factory=InverseGammaPrior)
    nodes_per_segment: int = 16
    credible_level: float = 0.95
    seed: int = 0

    @property
    def rule(self) -> QuadratureRule:
        return QuadratureRule(self.nodes_per_segment)


@dataclass
class CurveSummary:
    curve: str
    post_mean: float
    post_sd: float
    score: float
    interval: tuple[float, float]
    excludes_zero: bool | None

    def to_dict(self) -> dict:
        return {
            "curve": self.curve,
            "score": self.score,
            "post_mean": self.post_mean,
            "post_sd": self.post_sd,
            "interval": list(self.interval),
            "excludes_zero": self.excludes_zero,
        }


@dataclass
class BayesReport:
    """Posterior draws of the truncated squared norm per curve plus summaries.

    ``measures`` has shape ``(n_draws, p, K)`` (component measures), and
    ``squared_norms`` has shape ``(n_draws, K)``.  ``prob_greater[a, b]`` is
    the posterior probability that curve ``a`` has the larger squared norm.
    """

    curves: list[str]
    measures: np.ndarray
    squared_norms: np.ndarray
    summaries: list[CurveSummary]
    prob_greater: np.ndarray
    chain: ChainResult

    @property
    def scores(self) -> np.ndarray:
        return np.array([s.score for s in self.summaries])


def _summarise(names, measures, sq, level) -> tuple[list[CurveSummary], np.ndarray]:
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    summaries = []
    for k, name in enumerate(names):
        s = sq[:, k]
        mean, sd = float(s.mean()), float(s.std(ddof=1)) if s.size > 1 else 0.0
        score = mean / sd if sd > 0 else (np.inf if mean > 0 else 0.0)
        if measures.shape[1] == 1:
            # univariate: credible interval of the signed measure itself
            w = measures[:, 0, k]
            lo, hi = np.quantile(w, [lo_q, hi_q])
            excludes = bool(lo > 0 or hi < 0)
        else:
            lo, hi = np.quantile(s, [lo_q, hi_q])
            excludes = None
        summaries.append(CurveSummary(name, mean, sd, float(score), (float(lo), float(hi)), excludes))
    prob = (sq[:, :, None] > sq[:, None, :]).mean(axis=0)
    return summaries, prob


def bayes_womble_loadings(
    loadings: np.ndarray,
    locations: np.ndarray,
    curves: Sequence[Curve],
    config: BayesConfig | None = None,
) -> BayesReport:
    """Bayesian wombling on pre-computed, centred loadings of shape ``(n, p)``.

    A single column gives the univariate method.
    """
    config = config or BayesConfig()
    loadings = np.asarray(loadings, dtype=float)
    if loadings.ndim == 1:
        loadings = loadings[:, None]
    curves = list(curves)
    chain_cfg = config.chain
    if chain_cfg.seed != config.seed:
        chain_cfg = replace(chain_cfg, seed=config.seed)
    chain = mh_sample(loadings, locations, config.prior, chain_cfg)
    p = loadings.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(p + 1)[p])
    geometry = _MomentGeometry(locations, curves, config.rule)
    measures = np.empty((chain.n_draws, p, len(curves)))
    for d in range(chain.n_draws):
        for j in range(p):
            mean, cov = geometry.moments(chain.params(d, j), loadings[:, j])
            measures[d, j] = _sample_gaussian(rng, mean, cov)
    sq = np.sum(measures**2, axis=1)
    summaries, prob = _summarise([c.name for c in curves], measures, sq, config.credible_level)
    return BayesReport([c.name for c in curves], measures, sq, summaries, prob, chain)


def functional_bayes_womble(
    data: SpatialDataset, p: int, curves: Sequence[Curve], config: BayesConfig | None = None
) -> BayesReport:
    """Project the data on ``p`` basis functions and run the Bayesian method.

    The loading mean is taken as known: zero after subtracting the dataset's
    known mean, or the sample mean of the loadings when the dataset has none.
    """
    config = config or BayesConfig(p=p)
    loadings = project_values(data.centred(), data.grid, config.basis, p)
    if not data.mean_known:
        loadings = loadings - loadings.mean(axis=0)
    return bayes_womble_loadings(loadings, data.locations, curves, config)
