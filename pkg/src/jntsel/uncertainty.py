"""Offset uncertainty including model-selection effects, and the bandwidth scan.

For a given bandwidth the offset estimate of every candidate order is
treated as Gaussian with its asymptotic variance, and the components are
mixed with the cross-validation selection fractions.  The mixture
variance splits into a within-order part (``sigma_alpha``) and a
between-order part (``sigma_beta``).  The bandwidth minimizing the
mixture SD is selected, and the spread of offsets over the few best
bandwidths is added in quadrature.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import polyfit
from .crossval import CvConfig, SelectionFractions, selection_fractions
from .data_model import Dataset, RatioSpectrum, correct_spectra, pool_ratio
from .errors import ConfigError, FitError, InconsistencyError, ScanError
from .polyfit import PolyFit, PolyModel

__all__ = [
    "MixtureStats",
    "ScanResult",
    "mixture_stats",
    "per_order_fits",
    "scan_grid",
    "bandwidth_stats",
    "bandwidth_scan",
    "sigma_fmax",
    "sigma_tot_final",
    "k_lowest",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixtureStats:
    fmax: float
    selected_d: int
    a0_hat: float
    sigma_ran: float
    a0_bar: float
    sigma_alpha: float
    sigma_beta: float
    sigma_tot: float
    per_order: dict[int, tuple[float, float, float]]


@dataclass(frozen=True)
class ScanResult:
    grid: tuple[float, ...]
    stats: tuple[MixtureStats, ...]
    fmax_star: float
    sigma_tot_star: float
    sigma_fmax: float
    sigma_tot_final: float
    k_lowest: int = 5
    reference: float = 0.0
    fractions: tuple[SelectionFractions, ...] = ()
    sensitivity: dict[int, float] = field(default_factory=dict)

    @property
    def star(self) -> MixtureStats:
        return next(s for s in self.stats if s.fmax == self.fmax_star)

    @property
    def selected_d(self) -> int:
        return self.star.selected_d


def mixture_stats(
    per_order: Mapping[int, tuple[float, float] | PolyFit],
    p: SelectionFractions | Mapping[int, float],
    fmax: float | None = None,
) -> MixtureStats:
    """Mean and variance decomposition of the selection-weighted mixture.

    Parameters
    ----------
    per_order : mapping
        Order -> ``(a0, sigma_ran)`` or a :class:`PolyFit` on the raw pooled
        spectrum.
    p : SelectionFractions or mapping
        Selection fraction per order.
    fmax : float, optional
        Recorded on the result; taken from ``p`` when it is a
        :class:`SelectionFractions`.

    Raises
    ------
    InconsistencyError
        An order in ``p`` has no entry in ``per_order``.
    """
    if isinstance(p, SelectionFractions):
        fmax = p.fmax if fmax is None else fmax
        p = p.p
    comps = {}
    for d in sorted(p):
        if d not in per_order:
            raise InconsistencyError(f"order {d} has a selection fraction but no fit")
        v = per_order[d]
        a0, sig = (v.a0, v.sigma_a0_ran) if isinstance(v, PolyFit) else (float(v[0]), float(v[1]))
        comps[d] = (a0, sig, float(p[d]))
    w = np.array([c[2] for c in comps.values()])
    mu = np.array([c[0] for c in comps.values()])
    sig = np.array([c[1] for c in comps.values()])
    a0_bar = float(np.dot(w, mu))
    var_alpha = float(np.dot(w, sig**2))
    var_beta = float(np.dot(w, (mu - a0_bar) ** 2))
    best = max(w)
    selected = min(d for d, c in comps.items() if c[2] == best)
    return MixtureStats(
        fmax=float("nan") if fmax is None else float(fmax),
        selected_d=selected,
        a0_hat=comps[selected][0],
        sigma_ran=comps[selected][1],
        a0_bar=a0_bar,
        sigma_alpha=math.sqrt(var_alpha),
        sigma_beta=math.sqrt(var_beta),
        sigma_tot=math.sqrt(var_alpha + var_beta),
        per_order=comps,
    )


def per_order_fits(spectrum: RatioSpectrum, orders, fmax: float, f0: float = 1e6) -> dict[int, PolyFit]:
    """Unweighted fits of each order; orders that cannot be fitted are skipped."""
    out = {}
    for d in orders:
        try:
            out[d] = polyfit.fit(PolyModel(d, f0), spectrum, fmax)
        except FitError as exc:
            log.warning("fmax=%g Hz, d=%d: %s", fmax, d, exc)
    return out


def scan_grid(start: float = 200e3, stop: float = 1400e3, step: float = 25e3) -> list[float]:
    """Inclusive evenly spaced bandwidth grid, generated from integer indices."""
    if not step > 0:
        raise ConfigError("grid step must be positive")
    if not start < stop:
        raise ConfigError("grid start must be below grid stop")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [float(start + k * step) for k in range(n)]


def bandwidth_stats(
    dataset: Dataset, cfg: CvConfig, fmax: float, workers: int = 1
) -> tuple[MixtureStats, SelectionFractions]:
    """Selection fractions on corrected data, fits on the raw pooled spectrum, mixture."""
    raw = dataset
    if dataset.corrected:
        raise InconsistencyError("bandwidth statistics need the uncorrected dataset")
    fractions = selection_fractions(correct_spectra(raw), cfg, fmax, workers=workers)
    fits = per_order_fits(pool_ratio(raw), fractions.orders, fmax, cfg.f0)
    missing = [d for d in fractions.orders if d not in fits]
    if missing:
        # an order CV could use but the direct fit could not: drop and renormalize
        keep = {d: c for d, c in fractions.counts.items() if d in fits}
        total = sum(keep.values())
        if total == 0:
            raise FitError(f"no order can be fitted at fmax={fmax}")
        fractions = SelectionFractions(
            fmax, {d: c / total for d, c in keep.items()}, total, keep,
            tuple(sorted(set(fractions.dropped_orders) | set(missing))),
        )
    return mixture_stats(fits, fractions), fractions


def k_lowest(stats, k: int) -> list[MixtureStats]:
    """The ``k`` bandwidths with the smallest ``sigma_tot`` (smaller fmax on ties)."""
    return sorted(stats, key=lambda s: (s.sigma_tot, s.fmax))[:k]


def sigma_fmax(stats_by_fmax, k: int = 5) -> float:
    """Sample SD of the selected-order offsets at the ``k`` best bandwidths."""
    if k < 2:
        raise ConfigError("k must be at least 2")
    stats = list(stats_by_fmax)
    if len(stats) < k:
        raise ConfigError(f"need at least {k} bandwidths, got {len(stats)}")
    a0 = np.array([s.a0_hat for s in k_lowest(stats, k)])
    return float(np.std(a0, ddof=1))


def sigma_tot_final(sigma_tot_star: float, sigma_fmax_value: float) -> float:
    if sigma_tot_star < 0 or sigma_fmax_value < 0:
        raise ConfigError("uncertainty components must be nonnegative")
    return math.hypot(sigma_tot_star, sigma_fmax_value)


def bandwidth_scan(
    dataset: Dataset,
    cfg: CvConfig,
    grid_start: float = 200e3,
    grid_stop: float = 1400e3,
    grid_step: float = 25e3,
    k: int = 5,
    workers: int = 1,
    progress: Callable[[MixtureStats], None] | None = None,
) -> ScanResult:
    """Mixture statistics on every bandwidth and the minimum-uncertainty choice.

    Each bandwidth draws its splits from its own substreams, so the scan
    gives identical results run sequentially or on ``workers`` threads.
    Bandwidths where no order can be fitted are dropped with a warning.
    ``sensitivity`` additionally reports the spread term for ``k = 10``
    when enough bandwidths survive.
    """
    grid = scan_grid(grid_start, grid_stop, grid_step)

    def one(fmax: float):
        try:
            return bandwidth_stats(dataset, cfg, fmax)
        except FitError as exc:
            log.warning("dropping fmax=%g Hz: %s", fmax, exc)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, grid))
    else:
        results = []
        for fmax in grid:
            results.append(one(fmax))
            if progress is not None and results[-1] is not None:
                progress(results[-1][0])
    kept = [r for r in results if r is not None]
    if not kept:
        raise ScanError("no bandwidth on the grid could be analysed")
    stats = tuple(r[0] for r in kept)
    fractions = tuple(r[1] for r in kept)
    star = k_lowest(stats, 1)[0]
    if len(stats) >= max(k, 2):
        spread = sigma_fmax(stats, k)
    else:
        log.warning("only %d bandwidths; sigma_fmax set to 0", len(stats))
        spread = 0.0
    sens = {kk: sigma_fmax(stats, kk) for kk in sorted({k, 10}) if len(stats) >= kk}
    return ScanResult(
        grid=tuple(s.fmax for s in stats),
        stats=stats,
        fmax_star=star.fmax,
        sigma_tot_star=star.sigma_tot,
        sigma_fmax=spread,
        sigma_tot_final=sigma_tot_final(star.sigma_tot, spread),
        k_lowest=k,
        reference=dataset.a0_calc_bar,
        fractions=fractions,
        sensitivity=sens,
    )
