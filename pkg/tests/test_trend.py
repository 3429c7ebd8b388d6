import numpy as np
import pytest
from statsmodels.stats.diagnostic import het_breuschpagan

from jntsel.data_model import RatioSpectrum
from jntsel.errors import InputError, LeverageError, SingularFitError
from jntsel.polyfit import PolyModel, fit
from jntsel.simulate import SimConfig, simulate_dataset
from jntsel.trend import (
    DegenerateTestError,
    RunOffsets,
    bootstrap_trend,
    breusch_pagan,
    breusch_pagan_lm,
    modified_residuals,
    parametric_bootstrap_trend,
    per_run_offsets,
    wls_trend,
)

from helpers import normal_equations


def offsets(t, y, v):
    n = len(y)
    return RunOffsets(np.arange(1, n + 1), y, v, t)


def test_identical_noiseless_runs():
    ds = simulate_dataset(SimConfig(n_runs=5, per_run_noise_sd=0.0))
    o = per_run_offsets(ds, PolyModel(8), 1.25e6)
    assert np.ptp(o.y) < 1e-13 and np.all(o.v < 1e-28)
    assert o.t[0] == 0.0


def test_offsets_time_ordered():
    ds = simulate_dataset(SimConfig(n_runs=4, per_run_noise_sd=1e-4, days=(3.0, 1.0, 2.0, 0.5)))
    o = per_run_offsets(ds, PolyModel(4), 6e5)
    np.testing.assert_array_equal(o.run_ids, [4, 2, 3, 1])
    np.testing.assert_array_equal(o.t, [0.0, 0.5, 1.5, 2.5])


def test_two_points_saturated():
    tf = wls_trend(offsets([0.0, 2.0], [1.0, 3.0], [1.0, 1.0]))
    assert (tf.beta0, tf.beta1) == pytest.approx((1.0, 1.0))
    assert tf.chi2_obs == pytest.approx(0.0, abs=1e-24)


def test_three_collinear_points():
    tf = wls_trend(offsets([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], [1.0, 1.0, 1.0]))
    assert tf.beta0 == pytest.approx(0.0, abs=1e-14) and tf.beta1 == pytest.approx(1.0)
    assert tf.chi2_obs == pytest.approx(0.0, abs=1e-24)
    assert tf.p_consistency == pytest.approx(1.0)


def test_wls_against_normal_equations_and_hat():
    rng = np.random.default_rng(1)
    t = np.sort(rng.uniform(0, 90, 20))
    v = rng.uniform(1, 4, 20) * 1e-12
    y = 1e-6 * rng.standard_normal(20)
    tf = wls_trend(offsets(t, y, v))
    X = np.column_stack([np.ones(20), t])
    beta, inv = normal_equations(X, y, 1 / v)
    assert (tf.beta0, tf.beta1) == pytest.approx(tuple(beta), rel=1e-8)
    H = X @ inv @ X.T @ np.diag(1 / v)
    np.testing.assert_allclose(tf.hat_diag, np.diag(H), rtol=1e-8)
    assert tf.hat_diag.sum() == pytest.approx(2.0)


def test_wls_errors():
    with pytest.raises(InputError):
        wls_trend(offsets([0.0], [1.0], [1.0]))
    with pytest.raises(SingularFitError):
        wls_trend(offsets([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], [1.0, 1.0, 1.0]))
    with pytest.raises(InputError):
        offsets([0.0, 1.0], [1.0, 2.0], [1.0, 0.0])
    tf = wls_trend(offsets([0.0, 2.0], [1.0, 3.0], [1.0, 1.0]))
    with pytest.raises(LeverageError):
        modified_residuals(offsets([0.0, 2.0], [1.0, 3.0], [1.0, 1.0]), tf)


def test_zero_residuals_give_zero_se():
    o = offsets(np.arange(6.0), 1e-6 * np.arange(6.0), np.ones(6) * 1e-12)
    tf = bootstrap_trend(o, n_boot=500)
    assert tf.se_beta1 == pytest.approx(0.0, abs=1e-18)
    assert tf.se_beta0 == pytest.approx(0.0, abs=1e-18)


def test_parametric_se_vanishes_with_variance():
    t = np.arange(10.0)
    ses = [parametric_bootstrap_trend(offsets(t, np.zeros(10), np.full(10, v)), n_boot=2000)
           for v in (1e-6, 1e-10, 1e-14)]
    assert ses[0] > ses[1] > ses[2]
    assert ses[2] == pytest.approx(ses[0] * 1e-4, rel=1e-6)


def test_parametric_se_matches_analytic():
    t = np.linspace(0, 90, 45)
    v = np.full(45, 1e-12)
    se = parametric_bootstrap_trend(offsets(t, np.zeros(45), v), n_boot=20000, seed=3)
    X = np.column_stack([np.ones(45), t])
    analytic = np.sqrt(np.linalg.inv(X.T @ X / 1e-12)[1, 1])
    assert se == pytest.approx(analytic, rel=0.03)


def test_bootstrap_deterministic_and_thread_independent():
    rng = np.random.default_rng(4)
    t = np.linspace(0, 90, 30)
    o = offsets(t, 1e-6 * rng.standard_normal(30), np.full(30, 1e-12))
    a = bootstrap_trend(o, n_boot=3500, seed=9, workers=1)
    b = bootstrap_trend(o, n_boot=3500, seed=9, workers=4)
    assert (a.se_beta1, a.p_trend) == (b.se_beta1, b.p_trend)


def test_strong_trend_detected():
    rng = np.random.default_rng(6)
    t = np.linspace(0, 90, 45)
    o = offsets(t, -1e-7 * t + 1e-6 * rng.standard_normal(45), np.full(45, 1e-12))
    tf = bootstrap_trend(o, n_boot=2000)
    assert tf.p_trend < 0.01


def test_bootstrap_se_near_analytic_large_b():
    rng = np.random.default_rng(10)
    t = np.linspace(0, 90, 45)
    v = (2.2e-5 * rng.uniform(0.8, 1.2, 45)) ** 2
    o = offsets(t, np.sqrt(v) * rng.standard_normal(45), v)
    tf = bootstrap_trend(o, n_boot=50_000, seed=2)
    assert tf.se_beta1 == pytest.approx(tf.analytic_se_beta1, rel=0.15)


def test_bp_matches_statsmodels():
    rng = np.random.default_rng(3)
    n = 300
    x = np.linspace(0.01, 1.4, n)
    Z = np.column_stack([x**2, x**4, x**6])
    e = rng.standard_normal(n) * (1 + x)
    ours = breusch_pagan_lm(e, Z)
    lm, p, _, _ = het_breuschpagan(e, np.column_stack([np.ones(n), Z]), robust=True)
    assert ours.lm == pytest.approx(lm, rel=1e-8)
    assert ours.p_value == pytest.approx(p, rel=1e-6)
    assert ours.df == 3


def test_bp_on_fit_uses_design_columns():
    f = np.linspace(1e4, 1.2e6, 400)
    rng = np.random.default_rng(0)
    s = RatioSpectrum(f, 1 + 1e-4 * rng.standard_normal(400) * np.sqrt(f / 1e6), "pooled_raw")
    res = breusch_pagan(fit(PolyModel(6), s), s)
    assert res.df == 3 and res.n == 400


def test_bp_degenerate():
    with pytest.raises(DegenerateTestError):
        breusch_pagan_lm(np.ones(10), np.arange(10.0))
    with pytest.raises(DegenerateTestError):
        breusch_pagan_lm(np.arange(2.0), np.arange(2.0))
