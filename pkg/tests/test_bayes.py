import numpy as np
import pytest
from scipy.special import gammaincinv
from scipy.stats import multivariate_normal

from funcwomble.bayes import (
    BayesConfig,
    ChainConfig,
    HyperParams,
    InverseGammaPrior,
    _log_likelihoods,
    _MomentGeometry,
    _sq_distances,
    bayes_womble_loadings,
    functional_bayes_womble,
    mh_sample,
    posterior_wombling_moments,
    prior_measure_covariance,
)
from funcwomble.errors import ChainStuck
from funcwomble.fdata import Grid
from funcwomble.geometry import Curve, QuadratureRule
from funcwomble.simlab import SimConfig, boundary_pair, generate
from funcwomble.womble import SpatialDataset, WombleBLUP

SHORT = ChainConfig(n_iter=600, burn_in=200, thin=4, seed=3)


def small_instance(seed, n=6):
    rng = np.random.default_rng(seed)
    locs = rng.random((n, 2))
    theta = HyperParams(rng.uniform(0.02, 0.3), rng.uniform(0.5, 2.0), rng.uniform(0.2, 0.7))
    z = rng.standard_normal(n)
    a = rng.random(2)
    curve = Curve.segment(a, a + rng.uniform(0.1, 0.4, 2))
    return locs, theta, z, curve


class TestHyperParams:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            HyperParams(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            HyperParams(0.1, np.inf, 1.0)

    def test_prior_density_integrates_to_one(self):
        prior = InverseGammaPrior()
        x = np.linspace(1e-4, 200, 400001)
        assert np.trapezoid(np.exp(prior.logpdf(x)), x) == pytest.approx(1.0, abs=2e-3)

    def test_log_density_on_log_scale(self):
        prior = InverseGammaPrior()
        eta = np.linspace(-5, 3, 9)
        direct = prior.logpdf(np.exp(eta)) + eta
        shift = direct - prior.log_density_log(eta)
        assert np.ptp(shift) < 1e-12


class TestLikelihood:
    def test_matches_multivariate_normal(self, rng):
        locs = rng.random((7, 2))
        z = rng.standard_normal((7, 2))
        eta = np.log([[0.1, 1.2, 0.4], [0.3, 0.5, 0.9]])
        got = _log_likelihoods(eta, z, _sq_distances(locs))
        for j in range(2):
            nug, sill, r = np.exp(eta[j])
            cov = sill * np.exp(-_sq_distances(locs) / r**2) + nug * np.eye(7)
            ref = multivariate_normal(np.zeros(7), cov).logpdf(z[:, j]) + 3.5 * np.log(2 * np.pi)
            assert got[j] == pytest.approx(ref, rel=1e-12)


class TestChain:
    def test_prior_only_chain_recovers_prior(self):
        cfg = ChainConfig(n_iter=52000, burn_in=2000, thin=5, seed=1)
        res = mh_sample(np.zeros((0, 1)), np.zeros((0, 2)), config=cfg)
        draws = res.draws[:, 0, :]
        assert draws.shape == (10000, 3)
        exact_median = 0.1 / gammaincinv(2.0, 0.5)
        assert np.all(np.abs(draws.mean(axis=0) - 0.1) < 0.05)
        med = np.median(draws, axis=0)
        assert np.all((med > 0.04) & (med < 0.08))
        assert np.all(np.abs(med - exact_median) < 0.01)

    def test_likelihood_dominant_recovery(self):
        rng = np.random.default_rng(3)
        n = 200
        locs = rng.random((n, 2))
        cov = np.exp(-_sq_distances(locs) / 0.25) + 0.1 * np.eye(n)
        z = np.linalg.cholesky(cov) @ rng.standard_normal((n, 4))
        res = mh_sample(z, locs, config=ChainConfig(n_iter=4000, burn_in=1500, thin=5, seed=2))
        med = np.median(np.median(res.draws, axis=0), axis=0)
        assert med[0] == pytest.approx(0.1, rel=0.25)
        assert med[2] == pytest.approx(0.5, rel=0.25)

    @pytest.mark.xfail(
        reason="sill is weakly identified on the unit square and the default prior pulls it towards 0.06",
        strict=False,
    )
    def test_likelihood_dominant_sill(self):
        rng = np.random.default_rng(3)
        n = 200
        locs = rng.random((n, 2))
        cov = np.exp(-_sq_distances(locs) / 0.25) + 0.1 * np.eye(n)
        z = np.linalg.cholesky(cov) @ rng.standard_normal((n, 4))
        res = mh_sample(z, locs, config=ChainConfig(n_iter=4000, burn_in=1500, thin=5, seed=2))
        assert np.median(res.draws[:, :, 1]) == pytest.approx(1.0, rel=0.25)

    def test_deterministic(self, rng):
        locs = rng.random((10, 2))
        z = rng.standard_normal((10, 2))
        a = mh_sample(z, locs, config=SHORT)
        b = mh_sample(z, locs, config=SHORT)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_component_chain_independent_of_p(self, rng):
        locs = rng.random((10, 2))
        z = rng.standard_normal((10, 3))
        full = mh_sample(z, locs, config=SHORT)
        first = mh_sample(z[:, :1], locs, config=SHORT)
        np.testing.assert_allclose(full.draws[:, 0], first.draws[:, 0], rtol=1e-12)

    def test_shapes_and_diagnostics(self, rng):
        locs = rng.random((8, 2))
        res = mh_sample(rng.standard_normal((8, 2)), locs, config=SHORT)
        assert res.draws.shape == (100, 2, 3)
        assert np.all(res.draws > 0)
        rows = res.diagnostics_rows()
        assert len(rows) == 200 and len(rows[0]) == 6

    def test_stuck_chain_raises(self, rng):
        locs = rng.random((5, 2))
        cfg = ChainConfig(n_iter=300, burn_in=100, thin=1, min_acceptance=0.99)
        with pytest.raises(ChainStuck):
            mh_sample(rng.standard_normal(5), locs, config=cfg)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            ChainConfig(n_iter=10, burn_in=10)
        with pytest.raises(ValueError):
            ChainConfig(thin=0)


class TestPosteriorMoments:
    @pytest.mark.parametrize("seed", range(5))
    def test_equals_known_mean_blup(self, seed):
        locs, theta, z, curve = small_instance(seed)
        mean, _ = posterior_wombling_moments(theta, z, locs, curve)
        grid = Grid.uniform(5)
        data = SpatialDataset(locs, np.outer(z, np.ones(5)), grid, known_mean=np.zeros(5))
        blup = WombleBLUP(data, theta.as_model()).predict(curve)
        np.testing.assert_allclose(blup.measure.values, mean[0], rtol=1e-10, atol=1e-12)

    def test_data_at_mean_gives_zero(self, rng):
        locs = rng.random((6, 2))
        curve = Curve.segment((0.2, 0.2), (0.6, 0.5))
        mean, _ = posterior_wombling_moments(HyperParams(0.1, 1, 0.4), np.full(6, 2.5), locs, curve, mean=2.5)
        assert np.all(mean == 0.0)

    def test_far_curve_reverts_to_prior(self, rng):
        locs = rng.random((6, 2))
        theta = HyperParams(0.1, 1.0, 0.3)
        curve = Curve.segment((50.0, 50.0), (50.0, 50.5))
        mean, cov = posterior_wombling_moments(theta, rng.standard_normal(6), locs, curve)
        prior = prior_measure_covariance(theta.as_model(), [curve])
        assert abs(mean[0]) < 1e-12
        assert cov[0, 0] == pytest.approx(prior[0, 0], rel=1e-12)

    def test_prior_variance_short_segment(self):
        # a very short straight segment approaches the point gradient variance 2 sigma / rho^2
        theta = HyperParams(0.1, 1.5, 0.5)
        curve = Curve.segment((0.0, 0.0), (0.0, 1e-4))
        prior = prior_measure_covariance(theta.as_model(), [curve])
        assert prior[0, 0] == pytest.approx(2 * 1.5 / 0.25, rel=1e-6)

    def test_linear_in_data(self, rng):
        locs, theta, _, curve = small_instance(11)
        z1, z2 = rng.standard_normal((2, len(locs)))
        m1, c1 = posterior_wombling_moments(theta, z1, locs, curve)
        m2, c2 = posterior_wombling_moments(theta, z2, locs, curve)
        m12, c12 = posterior_wombling_moments(theta, 2 * z1 - 3 * z2, locs, curve)
        np.testing.assert_allclose(m12, 2 * m1 - 3 * m2, rtol=1e-10)
        np.testing.assert_allclose(c12, c1, rtol=1e-12)
        np.testing.assert_allclose(c1, c2, rtol=1e-12)

    def test_quadrature_refinement(self):
        locs, theta, z, curve = small_instance(4)
        m1, c1 = posterior_wombling_moments(theta, z, locs, curve, QuadratureRule(16))
        m2, c2 = posterior_wombling_moments(theta, z, locs, curve, QuadratureRule(64))
        assert abs(m1[0] - m2[0]) < 1e-6
        assert abs(c1[0, 0] - c2[0, 0]) < 1e-6

    def test_covariance_psd(self, rng):
        locs = rng.random((8, 2))
        curves = [Curve.segment(rng.random(2), rng.random(2) + 0.05, name=f"c{k}") for k in range(4)]
        _, cov = posterior_wombling_moments(HyperParams(0.05, 1.0, 0.4), rng.standard_normal(8), locs, curves)
        assert np.allclose(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > -1e-10

    def test_variance_not_above_prior(self, rng):
        locs, theta, z, curve = small_instance(8)
        _, cov = posterior_wombling_moments(theta, z, locs, curve)
        prior = prior_measure_covariance(theta.as_model(), [curve])
        assert 0.0 <= cov[0, 0] <= prior[0, 0]

    def test_fast_geometry_matches(self, rng):
        locs = rng.random((9, 2))
        curves = [Curve([[0.1, 0.1], [0.4, 0.3], [0.5, 0.8]], name="a"), Curve.segment((0.7, 0.2), (0.9, 0.9), name="b")]
        geo = _MomentGeometry(locs, curves, QuadratureRule(16))
        for theta in (HyperParams(0.1, 1.0, 0.4), HyperParams(0.02, 3.0, 0.15)):
            z = rng.standard_normal(9)
            m_fast, c_fast = geo.moments(theta, z)
            m_ref, c_ref = posterior_wombling_moments(theta, z, locs, curves, QuadratureRule(16))
            np.testing.assert_allclose(m_fast, m_ref, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(c_fast, c_ref, rtol=1e-9, atol=1e-10)

    def test_no_locations_gives_prior(self):
        theta = HyperParams(0.1, 1.0, 0.4)
        curve = Curve.segment((0, 0), (1, 0))
        mean, cov = posterior_wombling_moments(theta, np.zeros(0), np.zeros((0, 2)), curve)
        assert mean[0] == 0.0
        assert cov[0, 0] == pytest.approx(prior_measure_covariance(theta.as_model(), [curve])[0, 0])


class TestBayesWomble:
    def test_identical_curves_identical_scores(self, rng):
        locs = rng.random((10, 2))
        seg = ((0.3, 0.2), (0.6, 0.7))
        curves = [Curve.segment(*seg, name="a"), Curve.segment(*seg, name="b")]
        cfg = BayesConfig(p=2, chain=SHORT, seed=5)
        rep = bayes_womble_loadings(rng.standard_normal((10, 2)), locs, curves, cfg)
        # the two measures are perfectly correlated, so every draw coincides
        np.testing.assert_allclose(rep.squared_norms[:, 0], rep.squared_norms[:, 1], rtol=1e-6, atol=1e-12)
        assert rep.scores[0] == pytest.approx(rep.scores[1], rel=1e-6)

    def test_p1_reduces_to_univariate(self, rng):
        locs = rng.random((12, 2))
        alpha = rng.standard_normal(12)
        grid = Grid.uniform(21)
        data = SpatialDataset(locs, np.outer(alpha, np.ones(21)), grid, known_mean=np.zeros(21))
        curves = list(boundary_pair())
        cfg = BayesConfig(p=1, chain=SHORT, seed=9)
        functional = functional_bayes_womble(data, 1, curves, cfg)
        univariate = bayes_womble_loadings(alpha, locs, curves, cfg)
        np.testing.assert_allclose(functional.squared_norms, univariate.squared_norms, rtol=1e-9)
        np.testing.assert_allclose(functional.measures, univariate.measures, rtol=1e-9, atol=1e-12)
        for s in univariate.summaries:
            assert s.excludes_zero in (True, False)

    def test_report_shapes_and_probabilities(self, rng):
        locs = rng.random((10, 2))
        curves = list(boundary_pair())
        rep = bayes_womble_loadings(rng.standard_normal((10, 3)), locs, curves, BayesConfig(p=3, chain=SHORT))
        assert rep.measures.shape == (100, 3, 2)
        assert rep.squared_norms.shape == (100, 2)
        np.testing.assert_allclose(rep.prob_greater + rep.prob_greater.T, 1 - np.eye(2))
        assert rep.scores.shape == (2,)
        d = rep.summaries[0].to_dict()
        assert set(d) == {"curve", "score", "post_mean", "post_sd", "interval", "excludes_zero"}
        assert d["excludes_zero"] is None

    def test_deterministic(self, rng):
        locs = rng.random((10, 2))
        z = rng.standard_normal((10, 2))
        curves = list(boundary_pair())
        a = bayes_womble_loadings(z, locs, curves, BayesConfig(p=2, chain=SHORT, seed=4))
        b = bayes_womble_loadings(z, locs, curves, BayesConfig(p=2, chain=SHORT, seed=4))
        np.testing.assert_array_equal(a.squared_norms, b.squared_norms)

    @pytest.mark.slow
    def test_strong_boundary_preferred(self):
        curves = list(boundary_pair())
        chain = ChainConfig(n_iter=1500, burn_in=500, thin=5)
        wins = 0
        reps = 10
        for r in range(reps):
            data, _ = generate(SimConfig(f=5.0, seed=100 + r))
            rep = functional_bayes_womble(data, 3, curves, BayesConfig(p=3, chain=chain, seed=r))
            wins += rep.scores[1] > rep.scores[0]
        assert wins / reps > 0.7
