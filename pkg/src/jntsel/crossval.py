"""Model-order selection fractions from repeated five-fold cross-validation.

Runs, not frequency blocks, are the resampling unit: each random split
assigns every run to exactly one of five subsets.  For each split the
order with the smallest cross-validation statistic is tallied, and the
tallies over all splits give the selection fractions ``p(d)``.

:func:`cv_statistic` is the direct, fit-by-fit definition.
:func:`selection_fractions` evaluates the same quantity for thousands of
splits at once: the pooled training and validation ratio spectra of all
folds are formed with one matrix product, and every candidate order is
scored against a single nested orthonormal basis, since the order-``d``
least-squares prediction is the projection onto its leading columns.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import polyfit
from .data_model import Dataset, correct_spectra, pool_ratio
from .errors import ConfigError, FitError, InputError
from .polyfit import CANDIDATE_ORDERS, PolyModel
from .rng import STREAM_SPLITS, substream

__all__ = [
    "CvConfig",
    "SelectionFractions",
    "five_way_split",
    "split_labels",
    "cv_statistic",
    "cv_statistics",
    "selection_fractions",
    "TIE_RTOL",
]

log = logging.getLogger(__name__)

FOLDS = 5
# CV values whose square roots agree to this fraction of the validation
# ratio RMS are treated as ties (the smaller order wins)
TIE_RTOL = 1e-11
# splits per work item; fixed so results do not depend on thread count
CHUNK = 250


@dataclass(frozen=True)
class CvConfig:
    n_splits: int = 20_000
    folds: int = FOLDS
    candidate_orders: tuple[int, ...] = CANDIDATE_ORDERS
    seed: int = 0
    f0: float = 1e6
    validation: str = "corrected"

    def __post_init__(self):
        if int(self.n_splits) != self.n_splits or self.n_splits < 1:
            raise ConfigError("n_splits must be a positive integer")
        if self.folds != FOLDS:
            raise ConfigError("only five-fold cross-validation is supported")
        orders = tuple(int(d) for d in self.candidate_orders)
        if not orders:
            raise ConfigError("candidate_orders is empty")
        if any(d < 2 or d % 2 for d in orders):
            raise ConfigError("candidate orders must be even and >= 2")
        if list(orders) != sorted(set(orders)):
            raise ConfigError("candidate orders must be distinct and ascending")
        if self.validation not in ("corrected", "raw"):
            raise ConfigError("validation must be 'corrected' or 'raw'")
        object.__setattr__(self, "candidate_orders", orders)


@dataclass(frozen=True)
class SelectionFractions:
    fmax: float
    p: dict[int, float]
    n_splits: int
    counts: dict[int, int] = field(default_factory=dict)
    dropped_orders: tuple[int, ...] = ()

    def __post_init__(self):
        total = sum(self.p.values())
        if abs(total - 1.0) > 1e-12:
            raise InputError(f"selection fractions sum to {total}, not 1")
        if any(not 0.0 <= v <= 1.0 for v in self.p.values()):
            raise InputError("selection fraction outside [0, 1]")

    @property
    def orders(self) -> list[int]:
        return sorted(self.p)

    def mode(self) -> int:
        """Order with the largest fraction; ties go to the smaller order."""
        best = max(self.p.values())
        return min(d for d, v in self.p.items() if v == best)


def _chunk_sizes(n_runs: int) -> list[int]:
    base, extra = divmod(n_runs, FOLDS)
    return [base + 1 if k < extra else base for k in range(FOLDS)]


def five_way_split(n_runs: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of ``range(n_runs)`` into five consecutive chunks.

    A permutation of the run indices is cut into chunks whose sizes are
    ``ceil(n/5)`` for the first ``n mod 5`` chunks and ``floor(n/5)`` for
    the rest.
    """
    if n_runs < FOLDS:
        raise InputError(f"need at least {FOLDS} runs for five-fold CV, got {n_runs}")
    perm = rng.permutation(n_runs)
    bounds = np.cumsum([0] + _chunk_sizes(n_runs))
    return [perm[bounds[k] : bounds[k + 1]] for k in range(FOLDS)]


def split_labels(n_runs: int, seed: int, fmax: float, start: int, stop: int) -> np.ndarray:
    """Fold label of every run for splits ``start .. stop-1``.

    Split ``j`` at bandwidth ``fmax`` always draws from the substream keyed
    by ``(seed, fmax in Hz, j)``.
    """
    key = int(round(fmax))
    out = np.empty((stop - start, n_runs), dtype=np.intp)
    for row, j in enumerate(range(start, stop)):
        parts = five_way_split(n_runs, substream(seed, STREAM_SPLITS, key, j))
        for k, idx in enumerate(parts):
            out[row, idx] = k
    return out


def _split_as_labels(split, n_runs: int) -> np.ndarray:
    labels = np.full(n_runs, -1, dtype=np.intp)
    if len(split) != FOLDS:
        raise InputError(f"a split must have {FOLDS} subsets")
    for k, part in enumerate(split):
        part = np.asarray(part, dtype=np.intp)
        if np.any(labels[part] != -1):
            raise InputError("a run appears in more than one subset")
        labels[part] = k
    if np.any(labels < 0):
        raise InputError("a split must cover every run")
    return labels


def _corrected_and_validation(dataset: Dataset, validation: str) -> tuple[Dataset, np.ndarray]:
    """Corrected dataset plus the s_r matrix used to pool validation runs."""
    if dataset.corrected:
        corr = dataset
        raw_sr = dataset.s_r + (dataset.a0_calc - dataset.a0_calc_bar)[:, None] * dataset.s_q
    else:
        corr = correct_spectra(dataset)
        raw_sr = dataset.s_r
    return corr, (corr.s_r if validation == "corrected" else raw_sr)


def cv_statistic(
    dataset: Dataset,
    split,
    model: PolyModel,
    fmax: float,
    validation: str = "corrected",
) -> float:
    """Five-fold CV statistic for one split, computed fit by fit.

    Each subset in turn is the validation set: the other four are pooled
    into one ratio spectrum and fitted, the fit predicts the pooled
    validation ratio spectrum, and the mean squared deviation over blocks
    ``<= fmax`` is recorded.  Returns the average of the five values.
    ``split`` holds run positions (0-based) within ``dataset.runs``.
    """
    corr, val_sr = _corrected_and_validation(dataset, validation)
    labels = _split_as_labels(split, corr.n_runs)
    mask = corr.frequencies <= fmax
    freqs = corr.frequencies[mask]
    msd = []
    for k in range(FOLDS):
        train_ids = corr.run_ids[labels != k]
        fitted = polyfit.fit(model, pool_ratio(corr, train_ids, fmax))
        val = labels == k
        r_val = val_sr[val][:, mask].sum(axis=0) / corr.s_q[val][:, mask].sum(axis=0)
        dev = r_val - polyfit.predict(fitted, freqs)
        msd.append(np.mean(dev**2))
    return float(np.mean(msd))


class _Engine:
    """Batched CV evaluation on one bandwidth."""

    def __init__(self, dataset: Dataset, cfg: CvConfig, fmax: float):
        corr, val_sr = _corrected_and_validation(dataset, cfg.validation)
        mask = corr.frequencies <= fmax
        if not mask.any():
            raise InputError(f"fmax={fmax} is below the first grid frequency")
        self.n_runs = corr.n_runs
        self.sr = np.ascontiguousarray(corr.s_r[:, mask])
        self.sq = np.ascontiguousarray(corr.s_q[:, mask])
        self.sv = np.ascontiguousarray(val_sr[:, mask])
        self.tot_r = self.sr.sum(axis=0)
        self.tot_q = self.sq.sum(axis=0)
        pooled = self.tot_r / self.tot_q
        self.center = float(np.mean(pooled))
        self.scale = float(np.sqrt(np.mean((self.sv.sum(0) / self.tot_q) ** 2)))
        Q, fittable = polyfit.nested_basis(
            corr.frequencies[mask], max(cfg.candidate_orders), cfg.f0
        )
        self.orders = [d for d in cfg.candidate_orders if d in fittable]
        self.dropped = tuple(d for d in cfg.candidate_orders if d not in fittable)
        self.Q = Q

    def cv(self, labels: np.ndarray) -> np.ndarray:
        """CV statistic, shape ``(n_splits, n_orders)``, for fold labels."""
        S, N = labels.shape
        onehot = (labels[:, None, :] == np.arange(FOLDS)[None, :, None]).astype(float)
        onehot = onehot.reshape(S * FOLDS, N)
        fold_r = onehot @ self.sr
        fold_q = onehot @ self.sq
        fold_v = onehot @ self.sv
        r_train = (self.tot_r - fold_r) / (self.tot_q - fold_q) - self.center
        resid = fold_v / fold_q - self.center
        coef = r_train @ self.Q
        out = np.empty((S * FOLDS, len(self.orders)))
        col = 0
        for j, d in enumerate(self.orders):
            need = d // 2 + 1
            while col < need:
                resid -= np.outer(coef[:, col], self.Q[:, col])
                col += 1
            out[:, j] = np.mean(resid**2, axis=1)
        return out.reshape(S, FOLDS, -1).mean(axis=1)

    def select(self, cv: np.ndarray) -> np.ndarray:
        """Index of the winning order per split (smallest order among ties)."""
        root = np.sqrt(cv)
        best = root.min(axis=1, keepdims=True)
        within = root <= best + TIE_RTOL * self.scale
        return np.argmax(within, axis=1)


def cv_statistics(dataset: Dataset, cfg: CvConfig, fmax: float, splits) -> dict[int, np.ndarray]:
    """Batched CV statistics for explicit splits, keyed by order.

    ``splits`` is a sequence of five-subset partitions of run positions.
    Orders that cannot be fitted at ``fmax`` are absent from the result.
    """
    eng = _Engine(dataset, cfg, fmax)
    labels = np.vstack([_split_as_labels(s, eng.n_runs) for s in splits])
    cv = eng.cv(labels)
    return {d: cv[:, j] for j, d in enumerate(eng.orders)}


def selection_fractions(
    dataset: Dataset, cfg: CvConfig, fmax: float, workers: int = 1
) -> SelectionFractions:
    """Tally the CV-minimizing order over ``cfg.n_splits`` random splits.

    ``dataset`` may be raw or already corrected; raw spectra are corrected
    before splitting.  Orders whose design is underdetermined or singular
    at ``fmax`` are dropped with a warning.  The result depends only on
    ``(dataset, cfg, fmax)``, not on ``workers``.
    """
    eng = _Engine(dataset, cfg, fmax)
    if eng.n_runs < FOLDS:
        raise InputError(f"need at least {FOLDS} runs for five-fold CV, got {eng.n_runs}")
    if eng.dropped:
        log.warning("fmax=%g Hz: dropping unfittable order(s) %s", fmax, list(eng.dropped))
    if not eng.orders:
        raise FitError(f"no candidate order can be fitted at fmax={fmax}")

    def work(start: int) -> np.ndarray:
        stop = min(start + CHUNK, cfg.n_splits)
        labels = split_labels(eng.n_runs, cfg.seed, fmax, start, stop)
        try:
            winners = eng.select(eng.cv(labels))
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise FitError(f"CV failed in splits {start}..{stop - 1}: {exc}") from exc
        return np.bincount(winners, minlength=len(eng.orders))

    starts = range(0, cfg.n_splits, CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    counts = np.sum(parts, axis=0)
    p = {d: int(c) / cfg.n_splits for d, c in zip(eng.orders, counts)}
    return SelectionFractions(
        fmax=float(fmax),
        p=p,
        n_splits=cfg.n_splits,
        counts={d: int(c) for d, c in zip(eng.orders, counts)},
        dropped_orders=eng.dropped,
    )
