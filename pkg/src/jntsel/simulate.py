"""Synthetic multi-run datasets for validating the selection pipeline.

Each simulated run has ``s_q = 1`` in every block and
``s_r(f) = a0_calc + truth(f) + noise``, with Gaussian white noise whose
standard deviation may differ from run to run.  All calibrations are
equal, so the reference mean offset equals ``a0_calc``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import polyfit
from .data_model import (
    CalibrationRecord,
    Dataset,
    RatioSpectrum,
    RunSpectrum,
    block_grid,
    single_run_ratio,
)
from .errors import ConfigError
from .polyfit import PolyModel
from .rng import STREAM_SIM, substream

__all__ = [
    "REFERENCE_COEFFS",
    "SimConfig",
    "simulate_dataset",
    "standard_grid",
    "reference_noise_sd",
    "sixth_order_truth",
    "estimate_run_noise_sd",
]

# a_0 - a0_calc, a_2, a_4, a_6, a_8 for the 1250 kHz experimental fit
REFERENCE_COEFFS = (0.0, -4.33e-4, 1.66e-3, -2.25e-3, 6.26e-4)
# asymptotic sigma of a_0 reported with those coefficients
REFERENCE_SIGMA_A0 = 3.22e-6
SPAN_DAYS = 90.0


def standard_grid() -> np.ndarray:
    """1.8 kHz blocks from 900 Hz up to 2 MHz (1111 midpoints)."""
    return block_grid(2e6, 1800.0)


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Simulation truth and noise.

    ``truth_coeffs`` are ``(a_0, a_2, ..., a_d)`` with ``a_0`` the offset
    relative to ``a0_calc``.  ``per_run_noise_sd`` is a scalar (same SD
    for every run) or one value per run.  ``trend_slope`` adds
    ``slope * day`` to each run's offset.
    """

    truth_coeffs: tuple[float, ...] = REFERENCE_COEFFS
    n_runs: int = 45
    per_run_noise_sd: float | tuple[float, ...] = 0.0
    grid: np.ndarray | None = None
    seed: int = 0
    trend_slope: float = 0.0
    f0: float = 1e6
    a0_calc: float = 1.0
    acquisition_hours: float = 17.5
    days: tuple[float, ...] | None = None

    def __post_init__(self):
        if int(self.n_runs) != self.n_runs or self.n_runs < 1:
            raise ConfigError("n_runs must be a positive integer")
        sd = np.asarray(self.per_run_noise_sd, dtype=float)
        if sd.ndim > 1 or (sd.ndim == 1 and sd.shape != (self.n_runs,)) or np.any(sd < 0) or not np.all(np.isfinite(sd)):
            raise ConfigError("per_run_noise_sd needs n_runs nonnegative values")
        if len(self.truth_coeffs) < 1:
            raise ConfigError("truth_coeffs is empty")
        if self.days is not None and len(self.days) != self.n_runs:
            raise ConfigError("days needs one value per run")
        if not self.a0_calc > 0:
            raise ConfigError("a0_calc must be positive")

    @property
    def noise_sd(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.per_run_noise_sd, dtype=float), (self.n_runs,))

    @property
    def frequencies(self) -> np.ndarray:
        return standard_grid() if self.grid is None else np.asarray(self.grid, dtype=float)

    @property
    def day_offsets(self) -> np.ndarray:
        if self.days is not None:
            return np.asarray(self.days, dtype=float)
        return np.linspace(0.0, SPAN_DAYS, self.n_runs)


def _truth_curve(coeffs, freqs: np.ndarray, f0: float) -> np.ndarray:
    x2 = (freqs / f0) ** 2
    out = np.zeros_like(x2)
    for c in coeffs[::-1]:
        out = out * x2 + c
    return out


def simulate_dataset(cfg: SimConfig) -> Dataset:
    """Draw one synthetic dataset; a pure function of ``cfg``.

    Run ``i`` uses the substream keyed by ``(seed, i)``, so any subset of
    runs can be regenerated independently.
    """
    freqs = cfg.frequencies
    base = cfg.a0_calc + _truth_curve(tuple(cfg.truth_coeffs), freqs, cfg.f0)
    ones = np.ones_like(freqs)
    days = cfg.day_offsets
    runs, cals = [], []
    for i in range(cfg.n_runs):
        rng = substream(cfg.seed, STREAM_SIM, i)
        noise = rng.standard_normal(freqs.size) * cfg.noise_sd[i]
        s_r = base + cfg.trend_slope * days[i] + noise
        runs.append(RunSpectrum(i + 1, freqs, s_r, ones, cfg.acquisition_hours, float(days[i])))
        cals.append(CalibrationRecord(i + 1, cfg.a0_calc))
    return Dataset.build(runs, cals)


def reference_noise_sd(
    n_runs: int = 45,
    grid: np.ndarray | None = None,
    fmax: float = 1250e3,
    order: int = 8,
    sigma_a0: float = REFERENCE_SIGMA_A0,
    f0: float = 1e6,
) -> float:
    """Per-run white-noise SD that gives ``sigma_a0`` for the pooled fit.

    With ``s_q = 1`` the pooled ratio is the run average, so its noise SD
    is the per-run SD over ``sqrt(n_runs)``; the asymptotic SD of ``a_0``
    is that times ``sqrt([(X^T X)^{-1}]_00)`` for the order-``order``
    design on blocks ``<= fmax``.
    """
    freqs = standard_grid() if grid is None else np.asarray(grid, dtype=float)
    X = polyfit.design_matrix(freqs[freqs <= fmax], PolyModel(order, f0))
    # unit-noise fit of a zero spectrum gives the design factor directly
    _, R = np.linalg.qr(X)
    rinv = np.linalg.solve(R, np.eye(R.shape[0]))
    factor = np.sqrt((rinv @ rinv.T)[0, 0])
    return float(sigma_a0 / factor * np.sqrt(n_runs))


def sixth_order_truth(fmax: float = 900e3, grid: np.ndarray | None = None, f0: float = 1e6):
    """Order-6 truth: noiseless LS fit of order 6 to the order-8 truth on ``<= fmax``.

    The fitted constant is replaced by 0 so the true offset relative to
    ``a0_calc`` is zero, as for the order-8 truth.
    """
    freqs = standard_grid() if grid is None else np.asarray(grid, dtype=float)
    keep = freqs[freqs <= fmax]
    spec = RatioSpectrum(keep, _truth_curve(REFERENCE_COEFFS, keep, f0), "pooled_raw")
    fitted = polyfit.fit(PolyModel(6, f0), spec)
    return (0.0,) + tuple(float(c) for c in fitted.coeffs[1:])


def estimate_run_noise_sd(dataset: Dataset, model: PolyModel, fmax: float) -> np.ndarray:
    """Residual SD of the ``model`` fit to each run's own ratio spectrum."""
    out = []
    for r in dataset.runs:
        fitted = polyfit.fit(model, single_run_ratio(dataset, r.run_id, fmax))
        out.append(np.sqrt(fitted.residual_variance))
    return np.array(out)
