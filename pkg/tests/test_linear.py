import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackcast.core import WindowedDataset
from trackcast.errors import IllPosedError, InvalidArgumentError
from trackcast import linear as lin
from trackcast.linear import (
    _css_and_grad,
    _css_value,
    _window_diff_parts,
    difference,
    fit_arimax,
    fit_linear,
    predict_arimax,
    predict_arimax_batch,
    predict_linear,
    predict_linear_batch,
    undifference,
)


def ds_from(windows, targets, tf=0):
    w = np.asarray(windows, dtype=np.float64)
    return WindowedDataset(
        windows=w, targets=np.asarray(targets, dtype=np.float64),
        l=w.shape[1], n=w.shape[2], target_feature=tf,
    )


def random_ds(m=60, l=8, n=4, tf=1, seed=0):
    rng = np.random.default_rng(seed)
    return ds_from(rng.normal(size=(m, l, n)), rng.normal(size=m), tf=tf)


def ar_series_ds(phi, sigma, n_pts, l, seed):
    """Windows cut from one simulated AR(len(phi)) series."""
    rng = np.random.default_rng(seed)
    p = len(phi)
    x = np.zeros(n_pts)
    eps = rng.normal(0, sigma, n_pts)
    for t in range(p, n_pts):
        x[t] = sum(phi[i] * x[t - 1 - i] for i in range(p)) + eps[t]
    wins = np.lib.stride_tricks.sliding_window_view(x, l)[:-1]
    return ds_from(wins[:, :, None], x[l:]), x


class TestFitLinear:
    def test_exact_affine_recovery(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(50, 6, 4))
        true_w = np.array([2.0, -1.0, 0.5])
        # target feature at 1; exogenous columns are 0, 2, 3
        y = 3.0 + w[:, -1, [0, 2, 3]] @ true_w
        model = fit_linear(ds_from(w, y, tf=1))
        assert model.bias == pytest.approx(3.0, abs=1e-9)
        assert np.allclose(model.weights, true_w, atol=1e-9)
        assert not model.ridge_fallback
        preds = predict_linear_batch(model, w)
        assert np.allclose(preds, y, atol=1e-9)

    def test_single_window_prediction_matches_batch(self):
        ds = random_ds()
        model = fit_linear(ds)
        batch = predict_linear_batch(model, ds.windows)
        assert predict_linear(model, ds.windows[3]) == pytest.approx(batch[3])

    def test_only_newest_row_matters(self):
        ds = random_ds()
        model = fit_linear(ds)
        w = np.array(ds.windows[0])
        w[:-1] = 123.456  # older rows are ignored by the linear path
        assert predict_linear(model, w) == predict_linear(model, ds.windows[0])

    def test_ill_posed_when_windows_scarce(self):
        with pytest.raises(IllPosedError):
            fit_linear(random_ds(m=3, n=4))

    def test_ridge_fallback_on_duplicate_features(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(40, 5, 4))
        w[:, :, 3] = w[:, :, 2]  # exact collinearity
        model = fit_linear(ds_from(w, rng.normal(size=40), tf=0))
        assert model.ridge_fallback
        assert np.all(np.isfinite(predict_linear_batch(model, w)))

    def test_deterministic(self):
        ds = random_ds(seed=5)
        a, b = fit_linear(ds), fit_linear(ds)
        assert np.array_equal(a.weights, b.weights)
        assert a.bias == b.bias


class TestDifferencing:
    def test_first_difference(self):
        assert np.array_equal(difference([1.0, 3.0, 6.0, 10.0], 1), [2.0, 3.0, 4.0])

    def test_second_difference(self):
        assert np.array_equal(difference([1.0, 3.0, 6.0, 10.0], 2), [1.0, 1.0])

    def test_zero_degree_is_copy(self):
        s = [1.0, 2.0]
        out = difference(s, 0)
        assert np.array_equal(out, s)

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            difference([1.0, 2.0], 2)

    def test_undifference_d1(self):
        # last level 6, differenced forecast 4 -> next level 10
        assert undifference([6.0], 4.0, 1) == 10.0

    def test_undifference_d2(self):
        # levels ..., a, b with second-difference forecast f -> f + 2b - a
        a, b, f = 3.0, 7.0, 1.5
        assert undifference([a, b], f, 2) == f + 2 * b - a

    def test_undifference_needs_d_values(self):
        with pytest.raises(InvalidArgumentError):
            undifference([1.0], 0.5, 2)

    @given(
        st.lists(st.floats(-100, 100), min_size=4, max_size=12),
        st.integers(1, 2),
    )
    @settings(max_examples=150, deadline=None)
    def test_difference_undifference_identity(self, values, d):
        x = np.asarray(values, dtype=np.float64)
        z = difference(x, d)
        rebuilt = undifference(x[:-1][len(x) - 1 - d :], float(z[-1]), d)
        assert rebuilt == pytest.approx(float(x[-1]), abs=1e-9)


class TestArimaxValidation:
    def test_negative_orders(self):
        with pytest.raises(InvalidArgumentError):
            fit_arimax(random_ds(), -1, 0, 0)

    def test_differencing_cap(self):
        with pytest.raises(InvalidArgumentError):
            fit_arimax(random_ds(), 0, 3, 0)

    def test_window_must_exceed_p_plus_d(self):
        with pytest.raises(InvalidArgumentError):
            fit_arimax(random_ds(l=4), 3, 1, 0)

    def test_ma_needs_room_for_residual_bootstrap(self):
        # q > 0 requires l >= p + q + d + 3
        with pytest.raises(InvalidArgumentError):
            fit_arimax(random_ds(l=5), 1, 0, 2)

    def test_ill_posed_when_too_few_windows(self):
        with pytest.raises(IllPosedError):
            fit_arimax(random_ds(m=4, n=4), 1, 0, 0)

    def test_prediction_window_length_check(self):
        ds = random_ds(l=8)
        model = fit_arimax(ds, 2, 1, 0)
        short = np.zeros((2, ds.n))
        with pytest.raises(InvalidArgumentError):
            predict_arimax(model, short)


class TestArimaxEstimation:
    def test_ar2_coefficient_recovery(self):
        """Simulated AR(2), phi = (0.5, -0.3), sigma 0.1, 5000 points:
        the fitted coefficients land within 0.05 of the truth."""
        ds, _ = ar_series_ds([0.5, -0.3], 0.1, 5000, 8, seed=42)
        model = fit_arimax(ds, 2, 0, 0)
        assert abs(model.phi[0] - 0.5) < 0.05
        assert abs(model.phi[1] + 0.3) < 0.05

    def test_pure_ar_equals_direct_least_squares(self):
        # with q = 0 the fit is a plain regression on lagged values; solve
        # the same normal problem directly and compare exactly
        ds, x = ar_series_ds([0.5, -0.3], 0.1, 3000, 8, seed=42)
        model = fit_arimax(ds, 2, 0, 0)
        l = ds.l
        y = ds.targets
        design = np.column_stack([np.ones(ds.m), x[l - 1 : -1][: ds.m], x[l - 2 : -2][: ds.m]])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        assert model.c == pytest.approx(coef[0], abs=1e-10)
        assert np.allclose(model.phi, coef[1:], atol=1e-10)

    def test_order_zero_with_exog_matches_linear_path(self):
        """p = q = d = 0 plus exogenous features degenerates to the
        linear regression path; the two separate implementations must
        agree numerically."""
        ds = random_ds(m=200, l=6, n=4, tf=1, seed=7)
        lm = fit_linear(ds)
        am = fit_arimax(ds, 0, 0, 0)
        pl = predict_linear_batch(lm, ds.windows)
        pa = predict_arimax_batch(am, ds.windows)
        assert np.max(np.abs(pl - pa)) < 1e-6

    def test_d1_matches_manual_differenced_regression(self):
        ds = random_ds(m=120, l=7, n=3, tf=0, seed=9)
        model = fit_arimax(ds, 0, 1, 0)
        zy = ds.targets - ds.windows[:, -1, 0]
        design = np.hstack([np.ones((ds.m, 1)), ds.windows[:, -1, 1:]])
        coef, *_ = np.linalg.lstsq(design, zy, rcond=None)
        manual = design @ coef + ds.windows[:, -1, 0]
        assert np.allclose(predict_arimax_batch(model, ds.windows), manual, atol=1e-9)

    def test_ma1_theta_recovery(self):
        rng = np.random.default_rng(10)
        n_pts = 8000
        eps = rng.normal(0, 0.1, n_pts)
        x = np.empty(n_pts)
        x[0] = eps[0]
        x[1:] = eps[1:] + 0.5 * eps[:-1]
        wins = np.lib.stride_tricks.sliding_window_view(x, 10)[:-1]
        ds = ds_from(wins[:, :, None], x[10:])
        model = fit_arimax(ds, 0, 0, 1)
        assert abs(model.theta[0] - 0.5) < 0.1
        assert not model.css_warning

    def test_refinement_never_worsens_css(self):
        ds = random_ds(m=80, l=9, n=3, seed=11)
        model = fit_arimax(ds, 1, 0, 1)
        assert model.css_final <= model.css_initial + 1e-12

    def test_deterministic(self):
        ds = random_ds(m=70, l=9, n=3, seed=13)
        a = fit_arimax(ds, 1, 0, 1)
        b = fit_arimax(ds, 1, 0, 1)
        assert np.array_equal(a.phi, b.phi)
        assert np.array_equal(a.theta, b.theta)
        assert a.css_final == b.css_final

    def test_predict_single_matches_batch(self):
        ds = random_ds(m=50, l=8, n=3, seed=15)
        model = fit_arimax(ds, 2, 1, 0)
        batch = predict_arimax_batch(model, ds.windows)
        assert predict_arimax(model, ds.windows[7]) == pytest.approx(batch[7])

    def test_empty_batch(self):
        ds = random_ds(m=50, l=8, n=3, seed=15)
        model = fit_arimax(ds, 1, 0, 0)
        out = predict_arimax_batch(model, np.empty((0, ds.l, ds.n)))
        assert out.shape == (0,)


class TestCssGradient:
    @pytest.mark.parametrize("p,d,q", [(1, 0, 1), (2, 1, 1), (0, 0, 2), (2, 0, 2), (1, 2, 1)])
    def test_adjoint_matches_central_differences(self, p, d, q):
        rng = np.random.default_rng(3)
        ds = ds_from(rng.normal(size=(40, 9, 3)), rng.normal(size=40), tf=1)
        z, zy, xt, x_last = _window_diff_parts(ds, d)
        vec = rng.normal(scale=0.3, size=1 + p + q + (ds.n - 1))
        _, grad = _css_and_grad(vec, p, q, z, zy, xt, x_last)
        h = 1e-6
        num = np.zeros_like(vec)
        for k in range(vec.size):
            vp, vm = vec.copy(), vec.copy()
            vp[k] += h
            vm[k] -= h
            num[k] = (
                _css_value(vp, p, q, z, zy, xt, x_last)
                - _css_value(vm, p, q, z, zy, xt, x_last)
            ) / (2 * h)
        rel = np.abs(grad - num) / np.maximum(np.abs(grad) + np.abs(num), 1e-8)
        assert rel.max() < 1e-6
