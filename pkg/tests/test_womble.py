import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import null_space

from conftest import gaussian_field
from funcwomble.covmodel import CovarianceModel, covariance_matrix, grad_trace_cov
from funcwomble.errors import InputError
from funcwomble.fdata import Grid
from funcwomble.geometry import Curve, QuadratureRule
from funcwomble.womble import SpatialDataset, WombleBLUP, build_b, predict_measure, solve_weights, system_matrix


def random_instance(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 21))
    locs = rng.random((n, 2))
    k = int(rng.integers(1, 4))
    model = CovarianceModel.from_arrays(rng.uniform(0.01, 0.5), rng.uniform(0.2, 2.0, k), rng.uniform(0.1, 0.8, k))
    a, b = rng.random(2), rng.random(2)
    curve = Curve.segment(a, b if np.linalg.norm(b - a) > 1e-3 else a + 0.1)
    return rng, locs, model, curve


def explicit_unknown_mean(m, b):
    ones = np.ones(len(b))
    minv_1 = np.linalg.solve(m, ones)
    return np.linalg.solve(m, b - (ones @ np.linalg.solve(m, b)) / (ones @ minv_1) * ones)


def qp_oracle(m, b):
    # minimise w'Mw - 2 b'w on {1'w = 0}: parametrise the null space, one Newton step is exact
    z = null_space(np.ones((1, len(b))))
    y = np.linalg.solve(z.T @ m @ z, z.T @ b)
    return z @ y


class TestBuildB:
    def test_brute_force_oracle(self):
        model = CovarianceModel.from_arrays(0.1, [1.0, 0.4], [0.5, 0.2])
        locs = np.array([[0.2, 0.3], [0.8, 0.5], [0.74, 0.52], [0.5, 0.9]])
        curve = Curve([(0.75, 0.25), (0.75, 0.75), (0.9, 0.9)])
        b = build_b(model, locs, curve)
        # independent midpoint rule with 10^6 points per unit length
        ref = np.zeros(len(locs))
        for (p0, p1), normal in zip(zip(curve.vertices[:-1], curve.vertices[1:]), curve.segment_normals):
            length = np.linalg.norm(p1 - p0)
            k = int(1e6 * length)
            t = (np.arange(k) + 0.5) / k
            pts = p0 + t[:, None] * (p1 - p0)
            for i, s in enumerate(locs):
                ref[i] += np.sum(grad_trace_cov(model, pts - s) @ normal) * length / k
        ref /= curve.segment_lengths.sum()
        assert np.allclose(b, ref, rtol=1e-8, atol=1e-10)

    def test_sign_points_along_gradient(self):
        # a location just left of an upward segment with right (+x) normals: the
        # covariance increases towards it, so the flux of grad c(s - s_i) is negative
        model = CovarianceModel.from_arrays(0.0, [1.0], [0.3])
        curve = Curve.segment((0.5, 0.0), (0.5, 1.0))
        b = build_b(model, np.array([[0.4, 0.5], [0.6, 0.5]]), curve)
        assert b[0] < 0 < b[1]
        assert b[0] == pytest.approx(-b[1])


class TestSolveWeights:
    @pytest.mark.parametrize("seed", range(25))
    def test_unknown_mean_kkt_and_oracles(self, seed):
        _, locs, model, curve = random_instance(seed)
        m = system_matrix(model, locs)
        b = build_b(model, locs, curve)
        w, lam = solve_weights(covariance_matrix(model, locs), model.nugget_trace, b, mean_known=False)
        assert abs(w.sum()) < 1e-12
        assert np.max(np.abs(m @ w - b + lam / 2)) < 1e-10
        assert np.allclose(w, explicit_unknown_mean(m, b), atol=1e-8)
        assert np.allclose(w, qp_oracle(m, b), atol=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_known_mean(self, seed):
        _, locs, model, curve = random_instance(seed)
        m = system_matrix(model, locs)
        b = build_b(model, locs, curve)
        w, lam = solve_weights(covariance_matrix(model, locs), model.nugget_trace, b, mean_known=True)
        assert np.allclose(m @ w, b, atol=1e-10)
        assert np.allclose(w, np.linalg.solve(m, b), atol=1e-8)

    def test_multiple_right_hand_sides(self):
        _, locs, model, curve = random_instance(3, n=12)
        b1, b2 = build_b(model, locs, curve), build_b(model, locs, curve.flipped())
        c = covariance_matrix(model, locs)
        w, _ = solve_weights(c, model.nugget_trace, np.column_stack([b1, b2]), mean_known=False)
        w1, _ = solve_weights(c, model.nugget_trace, b1, mean_known=False)
        assert np.allclose(w[:, 0], w1, atol=1e-12)
        assert np.allclose(w[:, 1], -w1, atol=1e-12)


class TestPrediction:
    def dataset(self, rng, known=False, n=25):
        model = CovarianceModel.from_arrays(0.1, [1.0], [0.4])
        locs = rng.random((n, 2))
        vals, grid = gaussian_field(rng, locs, model)
        mean = np.zeros(len(grid)) if known else None
        return SpatialDataset(locs, vals, grid, known_mean=mean), model

    def test_linear_in_data(self, rng):
        data, model = self.dataset(rng)
        curve = Curve.segment((0.5, 0.2), (0.5, 0.8))
        other = data.with_values(rng.normal(size=data.values.shape))
        a = predict_measure(data, model, curve).measure.values
        b = predict_measure(other, model, curve).measure.values
        both = predict_measure(data.with_values(2 * data.values - 3 * other.values), model, curve).measure.values
        assert np.allclose(both, 2 * a - 3 * b, atol=1e-10)

    def test_constant_shift_cancels(self, rng):
        data, model = self.dataset(rng)
        curve = Curve.segment((0.5, 0.2), (0.5, 0.8))
        shift = np.sin(3 * data.grid.points) + 5
        a = predict_measure(data, model, curve)
        b = predict_measure(data.with_values(data.values + shift), model, curve)
        assert np.allclose(a.measure.values, b.measure.values, atol=1e-10)

    def test_known_mean_is_subtracted(self, rng):
        data, model = self.dataset(rng, known=True)
        curve = Curve.segment((0.5, 0.2), (0.5, 0.8))
        mu = np.cos(data.grid.points)
        moved = SpatialDataset(data.locations, data.values + mu, data.grid, known_mean=mu)
        assert np.allclose(
            predict_measure(data, model, curve).measure.values, predict_measure(moved, model, curve).measure.values
        )

    def test_model_scale_invariance(self, rng):
        data, model = self.dataset(rng)
        curve = Curve([(0.3, 0.2), (0.5, 0.6), (0.6, 0.9)])
        a = WombleBLUP(data, model).weights(curve)
        b = WombleBLUP(data, model.scaled(7.5)).weights(curve)
        assert np.allclose(a, b, atol=1e-10)

    def test_spatial_scale(self, rng):
        data, model = self.dataset(rng)
        curve = Curve.segment((0.5, 0.2), (0.5, 0.8))
        k = 3.0
        big = SpatialDataset(k * data.locations, data.values, data.grid)
        big_model = CovarianceModel.from_arrays(model.nugget_trace, model.sills, k * model.ranges)
        big_curve = Curve(k * curve.vertices)
        assert np.allclose(
            WombleBLUP(big, big_model).weights(big_curve), WombleBLUP(data, model).weights(curve) / k, atol=1e-10
        )

    def test_orientation(self, rng):
        data, model = self.dataset(rng)
        curve = Curve.segment((0.5, 0.2), (0.5, 0.8))
        a, b = predict_measure(data, model, curve), predict_measure(data, model, curve.flipped())
        assert np.allclose(a.measure.values, -b.measure.values)
        assert a.squared_norm == pytest.approx(b.squared_norm)

    def test_multi_curve_matches_single(self, rng):
        data, model = self.dataset(rng, known=True)
        curves = [Curve.segment((0.5, 0.2), (0.5, 0.8), name="a"), Curve.segment((0.1, 0.1), (0.9, 0.2), name="b")]
        many = WombleBLUP(data, model, QuadratureRule(8)).predict(curves)
        for c, res in zip(curves, many):
            single = predict_measure(data, model, c, QuadratureRule(8))
            assert res.curve == c.name
            assert single.squared_norm == pytest.approx(res.squared_norm, rel=1e-12)

    def test_linear_field_gradient(self):
        # a noiseless linear trend plus known mean: the predictor recovers the normal derivative roughly
        rng = np.random.default_rng(7)
        locs = rng.random((60, 2))
        grid = Grid.uniform(11)
        model = CovarianceModel.from_arrays(1e-6, [1.0], [2.0])
        vals = np.outer(locs[:, 0] - 0.5, np.ones(len(grid)))
        data = SpatialDataset(locs, vals, grid, known_mean=np.zeros(len(grid)))
        res = predict_measure(data, model, Curve.segment((0.5, 0.3), (0.5, 0.7)))
        assert np.allclose(res.measure.values, 1.0, atol=0.05)

    def test_to_dict(self, rng):
        data, model = self.dataset(rng)
        res = predict_measure(data, model, Curve.segment((0.5, 0.2), (0.5, 0.8), name="x"))
        d = res.to_dict(weights=True, measure=True)
        assert set(d) == {"curve", "squared_norm", "weights", "measure_grid", "measure_values"}


class TestDataset:
    def test_duplicate_locations(self):
        with pytest.raises(InputError):
            SpatialDataset(np.zeros((3, 2)), np.zeros((3, 5)), Grid.uniform(5))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            SpatialDataset(np.random.default_rng(0).random((3, 2)), np.zeros((3, 4)), Grid.uniform(5))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_weights_sum_zero_property(self, seed):
        _, locs, model, curve = random_instance(seed)
        w, _ = solve_weights(covariance_matrix(model, locs), model.nugget_trace, build_b(model, locs, curve), False)
        assert abs(w.sum()) < 1e-12
