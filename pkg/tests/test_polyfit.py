import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jntsel.data_model import RatioSpectrum
from jntsel.errors import ConfigError, DomainError, SingularFitError, UnderdeterminedError
from jntsel.polyfit import (
    CANDIDATE_ORDERS,
    PolyFit,
    PolyModel,
    design_matrix,
    fit,
    nested_basis,
    predict,
    residuals,
)
from jntsel.simulate import REFERENCE_COEFFS, standard_grid

from helpers import normal_equations, poly_values


def spectrum(freqs, values):
    return RatioSpectrum(np.asarray(freqs, float), np.asarray(values, float), "pooled_raw")


GRID = standard_grid()


@pytest.mark.parametrize("d", CANDIDATE_ORDERS)
def test_constant_spectrum(d):
    f = GRID[GRID <= 1.4e6]
    res = fit(PolyModel(d), spectrum(f, np.ones_like(f)))
    assert res.a0 == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(res.coeffs[1:], 0.0, atol=1e-9)
    assert res.residual_variance == pytest.approx(0.0, abs=1e-28)


def test_exact_quadratic_ten_blocks():
    f = np.linspace(1e5, 1e6, 10)
    res = fit(PolyModel(2), spectrum(f, 1 + 0.5 * (f / 1e6) ** 2))
    np.testing.assert_allclose(res.coeffs, [1.0, 0.5], atol=1e-12)
    assert res.n_points == 10


def test_model_validation():
    with pytest.raises(ConfigError):
        PolyModel(3)
    with pytest.raises(ConfigError):
        PolyModel(0)
    assert PolyModel(8).i_max == 4


def test_underdetermined_and_singular():
    with pytest.raises(UnderdeterminedError):
        fit(PolyModel(8), spectrum([1.0, 2.0, 3.0], [1, 1, 1]))
    with pytest.raises(SingularFitError):
        fit(PolyModel(2), spectrum([1e5, 1e5 + 1e-9], [1, 2]))


def test_weights_validation():
    f = np.linspace(1e5, 1e6, 10)
    with pytest.raises(DomainError):
        fit(PolyModel(2), spectrum(f, f), weights=np.zeros(10))
    with pytest.raises(DomainError):
        fit(PolyModel(2), spectrum(f, f), weights=np.ones(3))


def test_fmax_inclusive():
    f = np.arange(1, 11) * 1e5
    res = fit(PolyModel(2), spectrum(f, np.ones(10)), fmax=5e5)
    assert res.n_points == 5 and res.fmax == 5e5


def _fit_with(coeffs, d=None):
    d = d or 2 * (len(coeffs) - 1)
    return PolyFit(PolyModel(d), np.array(coeffs, float), np.zeros((d // 2 + 1,) * 2), 0.0, 0.0, 1, 1e6)


def test_predict_examples():
    assert predict(_fit_with([2.0], 2), [0.0, 5e5, 3e6]).tolist() == [2.0, 2.0, 2.0]
    assert predict(_fit_with([1.0, 0.5]), [1e6])[0] == 1.5
    a0 = 1.000100961 + 2.36e-6
    assert predict(_fit_with((a0,) + REFERENCE_COEFFS[1:]), [0.0])[0] == a0


def test_residuals_exact_polynomial_zero():
    f = GRID[GRID <= 1.25e6]
    s = spectrum(f, poly_values((1.0,) + REFERENCE_COEFFS[1:], f))
    res = fit(PolyModel(8), s)
    assert np.max(np.abs(residuals(res, s))) < 1e-14


def test_residual_mean_zero_and_noise_variance():
    rng = np.random.default_rng(11)
    f = GRID[GRID <= 1.2e6]
    assert f.size >= 500
    sd = 1e-4
    s = spectrum(f, 1.0 + sd * rng.standard_normal(f.size))
    res = fit(PolyModel(2), s)
    r = residuals(res, s)
    assert abs(r.mean()) < 1e-10
    assert np.var(r, ddof=2) == pytest.approx(sd**2, rel=0.2)


def test_f0_scale_equivariance():
    rng = np.random.default_rng(5)
    f = GRID[GRID <= 1e6]
    s = spectrum(f, poly_values(REFERENCE_COEFFS, f) + 1 + 1e-5 * rng.standard_normal(f.size))
    a = fit(PolyModel(6, 1e6), s)
    c = 2.5
    b = fit(PolyModel(6, c * 1e6), s)
    np.testing.assert_allclose(b.coeffs, a.coeffs * c ** (2 * np.arange(4)), rtol=1e-8)
    np.testing.assert_allclose(predict(b, f), predict(a, f), atol=1e-10)
    assert b.a0 == pytest.approx(a.a0, abs=1e-10)


@pytest.mark.parametrize("d0", [2, 4, 6])
def test_nesting_recovers_truth(d0):
    f = GRID[GRID <= 1.4e6]
    truth = [1.0, -4e-4, 1.5e-3, -2e-3][: d0 // 2 + 1]
    s = spectrum(f, poly_values(truth, f))
    for d in CANDIDATE_ORDERS:
        if d < d0:
            continue
        res = fit(PolyModel(d), s)
        assert res.a0 == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(res.coeffs[d0 // 2 + 1 :], 0.0, atol=1e-8)


def test_covariance_matches_normal_equations():
    rng = np.random.default_rng(2)
    f = np.sort(rng.uniform(5e4, 1e6, 40))
    y = 1 + 1e-3 * rng.standard_normal(40)
    w = rng.uniform(0.5, 2.0, 40)
    res = fit(PolyModel(4), spectrum(f, y), weights=w)
    X = design_matrix(f, PolyModel(4))
    beta, inv = normal_equations(X, y, w)
    s2 = np.sum(w * (y - X @ beta) ** 2) / (40 - 3)
    np.testing.assert_allclose(res.coeffs, beta, rtol=1e-8)
    np.testing.assert_allclose(res.coeff_cov, s2 * inv, rtol=1e-8)
    assert res.sigma_a0_ran == pytest.approx(np.sqrt(s2 * inv[0, 0]), rel=1e-8)
    np.testing.assert_allclose(res.coeff_cov, res.coeff_cov.T)
    assert np.all(np.linalg.eigvalsh(res.coeff_cov) >= -1e-30)


def test_saturated_fit_has_nan_variance():
    f = np.array([1e5, 2e5])
    res = fit(PolyModel(2), spectrum(f, [1.0, 2.0]))
    assert np.isnan(res.residual_variance)
    np.testing.assert_allclose(predict(res, f), [1.0, 2.0])


def test_nested_basis_spans_each_design():
    f = GRID[GRID <= 1.4e6]
    Q, orders = nested_basis(f, 14)
    assert orders == list(CANDIDATE_ORDERS)
    np.testing.assert_allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-12)
    for d in orders:
        X = design_matrix(f, PolyModel(d))
        Xs = X / np.linalg.norm(X, axis=0)
        Qd = Q[:, : d // 2 + 1]
        assert np.max(np.abs(Xs - Qd @ (Qd.T @ Xs))) < 1e-9


def test_nested_basis_drops_unfittable():
    _, orders = nested_basis(np.array([1e5, 2e5, 3e5]), 14)
    assert orders == [2, 4]


def test_to_dict():
    f = np.linspace(1e5, 1e6, 10)
    d = fit(PolyModel(2), spectrum(f, 1 + 0.5 * (f / 1e6) ** 2)).to_dict()
    assert d["order"] == 2 and set(d["coefficients"]) == {"a0", "a2"} and d["n_points"] == 10


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(CANDIDATE_ORDERS[:4]), st.integers(0, 2**32 - 1))
def test_random_instances_match_oracle(d, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3 * (d // 2 + 1), 80))
    f = np.sort(rng.uniform(1e5, 1e6, n))
    y = 1 + rng.normal(0, 1e-3, n)
    res = fit(PolyModel(d), spectrum(f, y))
    beta, inv = normal_equations(design_matrix(f, PolyModel(d)), y)
    np.testing.assert_allclose(res.coeffs, beta, rtol=1e-7, atol=1e-9)
