"""Temporal stability of per-run offsets.

Per-run offsets are regressed on acquisition day by weighted least squares
with weights ``1/V_i``.  Slope and intercept uncertainties come from a
residual bootstrap on leverage-adjusted ("modified") residuals; the same
resampling around a constant gives the null distribution of the slope
for a two-tailed no-trend test.  A chi-square test checks whether the
scatter is consistent with the asymptotic variances, and a Breusch-Pagan
test checks pooled-spectrum residuals for frequency-dependent variance.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import polyfit
from .data_model import Dataset, RatioSpectrum, correct_spectra, single_run_ratio
from .errors import FitError, InputError, JntselError, LeverageError, SingularFitError
from .polyfit import PolyFit, PolyModel
from .rng import STREAM_BOOT, STREAM_NULL, STREAM_PARAM, substream

__all__ = [
    "RunOffsets",
    "TrendFit",
    "BreuschPaganResult",
    "DegenerateTestError",
    "per_run_offsets",
    "wls_trend",
    "bootstrap_trend",
    "parametric_bootstrap_trend",
    "breusch_pagan",
    "breusch_pagan_lm",
]

# bootstrap replicates per substream block; fixed for thread-count independence
BLOCK = 1000


class DegenerateTestError(JntselError):
    """Auxiliary regression of a diagnostic test is degenerate."""


@dataclass(frozen=True, eq=False)
class RunOffsets:
    run_ids: np.ndarray
    y: np.ndarray
    v: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.run_ids, self.y, self.v, self.t)]
        n = arrs[1].size
        if any(a.shape != (n,) for a in arrs):
            raise InputError("run_ids, y, v and t must have equal length")
        if not np.all(arrs[2] > 0):
            raise InputError("variances must be strictly positive")
        if n > 1 and np.any(np.diff(arrs[3]) < 0):
            raise InputError("day offsets must be non-decreasing")
        object.__setattr__(self, "run_ids", np.asarray(self.run_ids, dtype=int))
        for name, a in zip(("y", "v", "t"), arrs[1:]):
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.y.size


@dataclass(frozen=True, eq=False)
class TrendFit:
    beta0: float
    beta1: float
    chi2_obs: float
    hat_diag: np.ndarray
    fitted: np.ndarray
    xtwx_inv: np.ndarray
    p_consistency: float
    variance_scale: float
    se_beta0: float = float("nan")
    se_beta1: float = float("nan")
    p_trend: float = float("nan")
    n_boot: int = 0
    null_exceedances: int = 0

    @property
    def analytic_se_beta1(self) -> float:
        """``sqrt([(X^T W X)^{-1}]_11 * kappa)`` with ``kappa = chi2/(n-2)``."""
        return float(np.sqrt(self.xtwx_inv[1, 1] * self.variance_scale))


def per_run_offsets(dataset: Dataset, model: PolyModel, fmax: float) -> RunOffsets:
    """Fit ``model`` to every run's corrected ratio spectrum.

    ``y_i`` is the run's fitted offset minus the weighted mean reference
    offset and ``V_i`` its asymptotic variance from that run's own fit.
    Runs are returned in time order with ``t`` measured from the first.
    """
    corr = dataset if dataset.corrected else correct_spectra(dataset)
    ids, y, v = [], [], []
    for r in corr.runs:
        try:
            f = polyfit.fit(model, single_run_ratio(corr, r.run_id, fmax))
        except FitError as exc:
            raise FitError(f"run {r.run_id}: {exc}") from exc
        ids.append(r.run_id)
        y.append(f.a0 - corr.a0_calc_bar)
        v.append(f.sigma_a0_ran**2)
    days = corr.days
    order = np.argsort(days, kind="stable")
    return RunOffsets(
        np.array(ids)[order], np.array(y)[order], np.array(v)[order], days[order] - days[order][0]
    )


def _design(t: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones_like(t), t])


def _wls_operator(t: np.ndarray, v: np.ndarray):
    """``(X^T W X)^{-1}`` and the map ``y -> beta``."""
    X = _design(t)
    w = 1.0 / v
    xtwx = X.T @ (w[:, None] * X)
    if np.linalg.cond(xtwx) > 1e14:
        raise SingularFitError("trend design is singular (all days equal?)")
    cov = np.linalg.inv(xtwx)
    return X, w, cov, cov @ (X.T * w)


def wls_trend(offsets: RunOffsets) -> TrendFit:
    """Weighted straight-line fit of offset against day.

    Returns intercept, slope, ``chi2 = sum w_i (y_i - yhat_i)^2``, the hat
    diagonal of ``X (X^T W X)^{-1} X^T W`` and the chi-square upper-tail
    p-value at ``n - 2`` degrees of freedom.
    """
    n = len(offsets)
    if n < 2:
        raise InputError("trend fit needs at least two runs")
    X, w, cov, L = _wls_operator(offsets.t, offsets.v)
    beta = L @ offsets.y
    yhat = X @ beta
    chi2 = float(np.sum(w * (offsets.y - yhat) ** 2))
    h = w * np.einsum("ij,jk,ik->i", X, cov, X)
    dof = n - 2
    return TrendFit(
        beta0=float(beta[0]),
        beta1=float(beta[1]),
        chi2_obs=chi2,
        hat_diag=h,
        fitted=yhat,
        xtwx_inv=cov,
        p_consistency=float(stats.chi2.sf(chi2, dof)) if dof > 0 else float("nan"),
        variance_scale=chi2 / dof if dof > 0 else float("nan"),
    )


def modified_residuals(offsets: RunOffsets, fit: TrendFit) -> np.ndarray:
    """``(y_i - yhat_i) / sqrt(V_i (1 - h_i))``."""
    if np.any(fit.hat_diag >= 1.0 - 1e-12):
        raise LeverageError("a run has leverage 1; modified residuals undefined")
    return (offsets.y - fit.fitted) / np.sqrt(offsets.v * (1.0 - fit.hat_diag))


def _replicate_betas(centre, scale, pool, L, seed, stream, n_boot, workers) -> np.ndarray:
    """Slope/intercept for ``n_boot`` replicates ``centre + scale * e*``.

    ``e*`` is drawn with replacement from ``pool`` (or standard normal when
    ``pool`` is None).  Replicates come in fixed blocks, each from its own
    substream.
    """
    n = centre.size

    def block(b: int) -> np.ndarray:
        m = min(BLOCK, n_boot - b * BLOCK)
        rng = substream(seed, stream, b)
        if pool is None:
            e = rng.standard_normal((m, n))
        else:
            e = pool[rng.integers(0, n, size=(m, n))]
        return (centre + scale * e) @ L.T

    blocks = range((n_boot + BLOCK - 1) // BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(block, blocks))
    else:
        parts = [block(b) for b in blocks]
    return np.vstack(parts)


def bootstrap_trend(
    offsets: RunOffsets, n_boot: int = 50_000, seed: int = 0, workers: int = 1
) -> TrendFit:
    """Residual-bootstrap standard errors and a two-tailed no-trend p-value.

    Replicates are ``y*_i = b0 + b1 t_i + sqrt(V_i) e*_i`` with ``e*``
    resampled from the centred modified residuals.  For the null
    distribution the fitted line is replaced by the weighted mean of
    ``y``; ``p_trend`` is the fraction of null slopes at least as large in
    magnitude as the observed slope.  When no null slope reaches it,
    ``p_trend`` is 0 and should be read as ``< 1/n_boot``.
    """
    if n_boot < 2:
        raise InputError("n_boot must be at least 2")
    fit = wls_trend(offsets)
    r = modified_residuals(offsets, fit)
    pool = r - r.mean()
    _, w, _, L = _wls_operator(offsets.t, offsets.v)
    sv = np.sqrt(offsets.v)
    betas = _replicate_betas(fit.fitted, sv, pool, L, seed, STREAM_BOOT, n_boot, workers)
    const = np.full(len(offsets), np.sum(w * offsets.y) / np.sum(w))
    null = _replicate_betas(const, sv, pool, L, seed, STREAM_NULL, n_boot, workers)
    hits = int(np.count_nonzero(np.abs(null[:, 1]) >= abs(fit.beta1)))
    return replace(
        fit,
        se_beta0=float(np.std(betas[:, 0], ddof=1)),
        se_beta1=float(np.std(betas[:, 1], ddof=1)),
        p_trend=hits / n_boot,
        n_boot=n_boot,
        null_exceedances=hits,
    )


def parametric_bootstrap_trend(
    offsets: RunOffsets, n_boot: int = 50_000, seed: int = 0, workers: int = 1
) -> float:
    """Slope SE from replicates ``yhat_i + N(0, V_i)``."""
    fit = wls_trend(offsets)
    _, _, _, L = _wls_operator(offsets.t, offsets.v)
    betas = _replicate_betas(
        fit.fitted, np.sqrt(offsets.v), None, L, seed, STREAM_PARAM, n_boot, workers
    )
    return float(np.std(betas[:, 1], ddof=1))


# heteroscedasticity ---------------------------------------------------


@dataclass(frozen=True)
class BreuschPaganResult:
    lm: float
    df: int
    p_value: float
    n: int


def breusch_pagan_lm(resid, regressors) -> BreuschPaganResult:
    """Studentized Breusch-Pagan test: ``n R^2`` of ``e^2`` on the regressors.

    ``regressors`` excludes the constant, which is always added.
    """
    e2 = np.asarray(resid, dtype=float) ** 2
    Z = np.asarray(regressors, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, k = Z.shape
    if k < 1 or n <= k + 1:
        raise DegenerateTestError("auxiliary regression needs more points than regressors")
    Z = np.column_stack([np.ones(n), Z / np.abs(Z).max(axis=0)])
    Q, R = np.linalg.qr(Z)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-11 * diag.max():
        raise DegenerateTestError("auxiliary design is rank deficient")
    centred = e2 - e2.mean()
    sst = float(centred @ centred)
    if sst <= 0:
        raise DegenerateTestError("squared residuals are constant")
    proj = Q.T @ e2
    # explained sum of squares about the mean (constant is column 0)
    ess = float(proj[1:] @ proj[1:])
    lm = n * ess / sst
    return BreuschPaganResult(lm=lm, df=k, p_value=float(stats.chi2.sf(lm, k)), n=n)


def breusch_pagan(fit: PolyFit, spectrum: RatioSpectrum, fmax: float | None = None) -> BreuschPaganResult:
    """Breusch-Pagan test on the residuals of ``fit``.

    The auxiliary regressors are the fit's non-constant design columns
    ``(f/f0)^2 .. (f/f0)^d``, so the test has ``d/2`` degrees of freedom.
    """
    fmax = fit.fmax if fmax is None else fmax
    s = spectrum.truncate(fmax)
    e = polyfit.residuals(fit, s)
    X = polyfit.design_matrix(s.frequencies, fit.model)
    return breusch_pagan_lm(e, X[:, 1:])
