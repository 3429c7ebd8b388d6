"""Least-squares fits of the even-polynomial ratio-spectrum model.

The model is ``r(f) = sum_i a_{2i} (f/f0)^{2i}`` for ``i = 0 .. d/2``.
Monomial columns up to ``(f/f0)^14`` are badly conditioned, so fits go
through a Householder QR of the column-scaled design rather than the
normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import RatioSpectrum
from .errors import ConfigError, DomainError, SingularFitError, UnderdeterminedError

__all__ = [
    "CANDIDATE_ORDERS",
    "PolyModel",
    "PolyFit",
    "design_matrix",
    "fit",
    "predict",
    "residuals",
    "nested_basis",
]

CANDIDATE_ORDERS = (2, 4, 6, 8, 10, 12, 14)

# relative pivot threshold on the scaled R diagonal
_RANK_TOL = 1e-11


@dataclass(frozen=True)
class PolyModel:
    d: int
    f0: float = 1e6

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2 or self.d % 2:
            raise ConfigError(f"order d must be an even integer >= 2, got {self.d!r}")
        if not self.f0 > 0:
            raise ConfigError("reference frequency f0 must be positive")
        object.__setattr__(self, "d", int(self.d))

    @property
    def i_max(self) -> int:
        return self.d // 2

    @property
    def n_params(self) -> int:
        return self.i_max + 1


@dataclass(frozen=True, eq=False)
class PolyFit:
    """Fitted coefficients ``a_0, a_2, ..., a_d`` and their covariance."""

    model: PolyModel
    coeffs: np.ndarray
    coeff_cov: np.ndarray
    sigma_a0_ran: float
    residual_variance: float
    n_points: int
    fmax: float

    @property
    def a0(self) -> float:
        return float(self.coeffs[0])

    def to_dict(self) -> dict:
        return {
            "order": self.model.d,
            "f0": self.model.f0,
            "fmax": self.fmax,
            "coefficients": {f"a{2 * i}": float(c) for i, c in enumerate(self.coeffs)},
            "covariance": self.coeff_cov.tolist(),
            "sigma_a0": self.sigma_a0_ran,
            "residual_variance": self.residual_variance,
            "n_points": self.n_points,
        }


def design_matrix(frequencies, model: PolyModel) -> np.ndarray:
    """Columns ``(f/f0)^(2i)``, ``i = 0 .. i_max``."""
    x2 = (np.asarray(frequencies, dtype=float) / model.f0) ** 2
    return x2[:, None] ** np.arange(model.n_params)


def _scaled_qr(X: np.ndarray):
    scale = np.sqrt(np.einsum("ij,ij->j", X, X))
    if np.any(scale == 0):
        raise SingularFitError("design has an all-zero column")
    Q, R = np.linalg.qr(X / scale)
    diag = np.abs(np.diag(R))
    if diag.min() <= _RANK_TOL * diag.max():
        raise SingularFitError(
            f"rank-deficient design (pivot ratio {diag.min() / diag.max():.2e})"
        )
    return Q, R, scale


def fit(model: PolyModel, spectrum: RatioSpectrum, fmax: float | None = None, weights=None) -> PolyFit:
    """Fit the even polynomial to blocks with midpoint ``<= fmax``.

    Parameters
    ----------
    model : PolyModel
    spectrum : RatioSpectrum
    fmax : float, optional
        Inclusive fitting bandwidth; all blocks when omitted.
    weights : array_like, optional
        Positive per-block weights over the blocks kept by ``fmax``.

    Returns
    -------
    PolyFit
        ``coeff_cov = s^2 (X^T W X)^{-1}`` with ``s^2`` the weighted SSR
        over ``n - i_max - 1`` degrees of freedom.

    Raises
    ------
    UnderdeterminedError
        Fewer blocks than parameters.
    SingularFitError
        Rank-deficient design.
    """
    s = spectrum if fmax is None else spectrum.truncate(fmax)
    n, p = len(s), model.n_params
    if n < p:
        raise UnderdeterminedError(f"d={model.d} needs {p} blocks, only {n} at fmax={fmax}")
    X = design_matrix(s.frequencies, model)
    y = s.ratios
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise DomainError(f"expected {n} weights, got shape {w.shape}")
        if not np.all(w > 0):
            raise DomainError("weights must be positive")
        sw = np.sqrt(w)
    else:
        sw = np.ones(n)
    Q, R, scale = _scaled_qr(X * sw[:, None])
    yw = y * sw
    beta_scaled = np.linalg.solve(R, Q.T @ yw)
    coeffs = beta_scaled / scale
    resid = yw - (X * sw[:, None]) @ coeffs
    dof = n - p
    ssr = float(resid @ resid)
    s2 = ssr / dof if dof > 0 else float("nan")
    Rinv = np.linalg.solve(R, np.eye(p))
    cov = s2 * (Rinv @ Rinv.T) / np.outer(scale, scale)
    cov = 0.5 * (cov + cov.T)
    return PolyFit(
        model=model,
        coeffs=coeffs,
        coeff_cov=cov,
        sigma_a0_ran=float(np.sqrt(cov[0, 0])),
        residual_variance=s2,
        n_points=n,
        fmax=float(s.frequencies[-1] if fmax is None else fmax),
    )


def predict(fitted: PolyFit, frequencies) -> np.ndarray:
    x2 = (np.asarray(frequencies, dtype=float) / fitted.model.f0) ** 2
    # Horner in x^2
    out = np.zeros_like(x2)
    for c in fitted.coeffs[::-1]:
        out = out * x2 + c
    return out


def residuals(fitted: PolyFit, spectrum: RatioSpectrum, fmax: float | None = None) -> np.ndarray:
    """Observed minus predicted ratio per block (``<= fmax``)."""
    s = spectrum if fmax is None else spectrum.truncate(fmax)
    return s.ratios - predict(fitted, s.frequencies)


def nested_basis(frequencies, max_order: int, f0: float = 1e6) -> tuple[np.ndarray, list[int]]:
    """Orthonormal basis whose leading columns span each lower-order design.

    Returns ``(Q, orders)`` where the first ``d/2 + 1`` columns of ``Q``
    span the order-``d`` design for every ``d`` in ``orders``.  Orders
    whose design is rank deficient or underdetermined on ``frequencies``
    are left out of ``orders`` (and ``Q`` is truncated accordingly).
    """
    model = PolyModel(max_order, f0)
    X = design_matrix(frequencies, model)
    n = X.shape[0]
    X = X[:, : min(model.n_params, n)]
    X = X / np.sqrt(np.einsum("ij,ij->j", X, X))
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    ok = 0
    # leading pivots only: a tiny pivot invalidates all higher orders
    for k in range(diag.size):
        if diag[k] <= _RANK_TOL * diag[: k + 1].max():
            break
        ok = k + 1
    orders = [2 * i for i in range(1, ok)]
    return Q[:, :ok], orders
