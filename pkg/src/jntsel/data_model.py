"""Experimental quantities: per-run spectra, calibrations, pooled ratios.

A :class:`Dataset` holds the blocked PSD estimates of every run on one
shared frequency grid, plus the per-run reference offsets from the
calibration experiment.  Ratio spectra are formed by pooling numerator and
denominator PSDs over runs before dividing.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CalibrationError, DomainError, GridError, InputError

__all__ = [
    "RunSpectrum",
    "CalibrationRecord",
    "Dataset",
    "RatioSpectrum",
    "RATIO_KINDS",
    "load_dataset",
    "read_spectra",
    "read_calibrations",
    "write_dataset",
    "write_ratio_spectrum",
    "pool_ratio",
    "single_run_ratio",
    "correct_spectra",
    "spread_a0_calc",
    "block_grid",
]

RATIO_KINDS = ("pooled_raw", "pooled_corrected", "single_run")

SPECTRA_HEADER = ("run_id", "frequency_hz", "s_r", "s_q")
CALIBRATION_HEADER = ("run_id", "a0_calc", "acquisition_hours", "day_offset")


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional")
    arr.setflags(write=False)
    return arr


def _check_grid(freqs: np.ndarray, what: str) -> None:
    if freqs.size == 0:
        raise GridError(f"{what}: empty frequency grid")
    if not np.all(np.isfinite(freqs)):
        raise GridError(f"{what}: non-finite frequency")
    if freqs.size > 1 and not np.all(np.diff(freqs) > 0):
        raise GridError(f"{what}: frequencies must be strictly increasing")


def block_grid(fstop: float, width: float = 1800.0, fstart: float | None = None) -> np.ndarray:
    """Block midpoints ``fstart + k*width`` up to and including ``fstop``.

    Midpoints are generated from integer block indices so every caller
    gets bitwise identical grids.  The default first midpoint is
    ``width/2`` (blocks start at 0 Hz).
    """
    if width <= 0:
        raise GridError("block width must be positive")
    start = width / 2 if fstart is None else float(fstart)
    n = int(np.floor((fstop - start) / width + 1e-9)) + 1
    if n < 1:
        raise GridError("grid would be empty")
    return start + width * np.arange(n, dtype=float)


@dataclass(frozen=True, eq=False)
class RunSpectrum:
    """Blocked resistor and QVNS PSD estimates for one run."""

    run_id: int
    frequencies: np.ndarray
    s_r: np.ndarray
    s_q: np.ndarray
    acquisition_time: float
    timestamp: float = 0.0

    def __post_init__(self):
        if int(self.run_id) != self.run_id or self.run_id < 1:
            raise InputError(f"run_id must be a positive integer, got {self.run_id!r}")
        object.__setattr__(self, "run_id", int(self.run_id))
        for name in ("frequencies", "s_r", "s_q"):
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        _check_grid(self.frequencies, f"run {self.run_id}")
        n = self.frequencies.size
        if self.s_r.size != n or self.s_q.size != n:
            raise GridError(f"run {self.run_id}: s_r/s_q length differs from frequency grid")
        if not np.all(np.isfinite(self.s_r)) or not np.all(np.isfinite(self.s_q)):
            raise DomainError(f"run {self.run_id}: non-finite PSD value")
        if not np.all(self.s_q > 0):
            raise DomainError(f"run {self.run_id}: s_q must be strictly positive")
        if not self.acquisition_time > 0:
            raise DomainError(f"run {self.run_id}: acquisition_time must be positive")


@dataclass(frozen=True)
class CalibrationRecord:
    """Reference offset for one run.

    ``weight`` overrides the acquisition-time weight when given; it is
    normalized together with the other runs' weights.
    """

    run_id: int
    a0_calc: float
    weight: float | None = None

    def __post_init__(self):
        if not self.a0_calc > 0:
            raise DomainError(f"run {self.run_id}: a0_calc must be positive")
        if self.weight is not None and not self.weight > 0:
            raise DomainError(f"run {self.run_id}: calibration weight must be positive")


@dataclass(frozen=True, eq=False)
class RatioSpectrum:
    frequencies: np.ndarray
    ratios: np.ndarray
    kind: str = "pooled_raw"

    def __post_init__(self):
        object.__setattr__(self, "frequencies", _frozen(self.frequencies, "frequencies"))
        object.__setattr__(self, "ratios", _frozen(self.ratios, "ratios"))
        _check_grid(self.frequencies, "ratio spectrum")
        if self.ratios.size != self.frequencies.size:
            raise GridError("ratio spectrum: frequencies and ratios differ in length")
        if self.kind not in RATIO_KINDS:
            raise InputError(f"unknown ratio spectrum kind {self.kind!r}")

    def __len__(self) -> int:
        return self.frequencies.size

    def truncate(self, fmax: float) -> "RatioSpectrum":
        """Blocks with midpoint ``<= fmax``."""
        keep = self.frequencies <= fmax
        return RatioSpectrum(self.frequencies[keep], self.ratios[keep], self.kind)


@dataclass(frozen=True, eq=False)
class Dataset:
    """All runs on a common grid with one calibration per run.

    Use :meth:`build` to construct; it validates the cross-run invariants
    and computes ``a0_calc_bar``.  ``corrected`` records whether
    :func:`correct_spectra` has been applied to ``s_r``.
    """

    runs: tuple[RunSpectrum, ...]
    calibrations: tuple[CalibrationRecord, ...]
    a0_calc_bar: float
    corrected: bool = False
    _sr: np.ndarray = field(init=False, repr=False)
    _sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.runs:
            raise InputError("dataset has no runs")
        ids = [r.run_id for r in self.runs]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate run_id in spectra")
        cal_ids = [c.run_id for c in self.calibrations]
        if len(set(cal_ids)) != len(cal_ids):
            raise CalibrationError("duplicate run_id in calibrations")
        missing = sorted(set(ids) - set(cal_ids))
        if missing:
            raise CalibrationError(f"no calibration for run(s) {missing}")
        orphans = sorted(set(cal_ids) - set(ids))
        if orphans:
            raise CalibrationError(f"calibration(s) without spectra for run(s) {orphans}")
        # calibrations are kept in run order
        by_id = {c.run_id: c for c in self.calibrations}
        object.__setattr__(self, "calibrations", tuple(by_id[i] for i in ids))
        grid = self.runs[0].frequencies
        for r in self.runs[1:]:
            if r.frequencies.shape != grid.shape or not np.array_equal(r.frequencies, grid):
                raise GridError(
                    f"run {r.run_id} frequency grid differs from run {self.runs[0].run_id}"
                )
        sr = np.vstack([r.s_r for r in self.runs])
        sq = np.vstack([r.s_q for r in self.runs])
        sr.setflags(write=False)
        sq.setflags(write=False)
        object.__setattr__(self, "_sr", sr)
        object.__setattr__(self, "_sq", sq)

    @classmethod
    def build(
        cls,
        runs: Iterable[RunSpectrum],
        calibrations: Iterable[CalibrationRecord],
        corrected: bool = False,
    ) -> "Dataset":
        runs = tuple(runs)
        calibrations = tuple(calibrations)
        by_id = {c.run_id: c for c in calibrations}
        if not runs:
            raise InputError("dataset has no runs")
        missing = [r.run_id for r in runs if r.run_id not in by_id]
        if missing:
            raise CalibrationError(f"no calibration for run(s) {missing}")
        cals = [by_id[r.run_id] for r in runs]
        a0 = np.array([c.a0_calc for c in cals])
        w = calibration_weights(runs, cals)
        # mean about the first value: exact when all calibrations agree
        return cls(runs, calibrations, float(a0[0] + np.dot(w, a0 - a0[0])), corrected)

    # array views -----------------------------------------------------

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def frequencies(self) -> np.ndarray:
        return self.runs[0].frequencies

    @property
    def run_ids(self) -> np.ndarray:
        return np.array([r.run_id for r in self.runs])

    @property
    def s_r(self) -> np.ndarray:
        """Resistor PSDs, shape ``(n_runs, n_blocks)``."""
        return self._sr

    @property
    def s_q(self) -> np.ndarray:
        """QVNS PSDs, shape ``(n_runs, n_blocks)``."""
        return self._sq

    @property
    def a0_calc(self) -> np.ndarray:
        return np.array([c.a0_calc for c in self.calibrations])

    @property
    def days(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.runs])

    @property
    def weights(self) -> np.ndarray:
        return calibration_weights(self.runs, self.calibrations)

    def index_of(self, run_ids: Iterable[int]) -> np.ndarray:
        pos = {r.run_id: k for k, r in enumerate(self.runs)}
        try:
            return np.array([pos[int(i)] for i in run_ids], dtype=int)
        except KeyError as exc:
            raise InputError(f"unknown run_id {exc.args[0]}") from None

    def with_calibrations(self, calibrations: Iterable[CalibrationRecord]) -> "Dataset":
        return Dataset.build(self.runs, calibrations, corrected=self.corrected)


def calibration_weights(
    runs: Sequence[RunSpectrum], calibrations: Sequence[CalibrationRecord]
) -> np.ndarray:
    """Normalized per-run weights for the mean reference offset.

    Explicit calibration weights win if every record carries one;
    otherwise acquisition times are used.
    """
    if calibrations and all(c.weight is not None for c in calibrations):
        w = np.array([c.weight for c in calibrations], dtype=float)
    else:
        w = np.array([r.acquisition_time for r in runs], dtype=float)
    return w / w.sum()


# operations ----------------------------------------------------------


def _block_mask(frequencies: np.ndarray, fmax: float | None) -> np.ndarray:
    if fmax is None:
        return np.ones(frequencies.size, dtype=bool)
    if fmax < frequencies[0]:
        raise InputError(f"fmax={fmax} is below the first grid frequency {frequencies[0]}")
    return frequencies <= fmax


def pool_ratio(
    dataset: Dataset,
    run_subset: Iterable[int] | None = None,
    fmax: float | None = None,
) -> RatioSpectrum:
    """Blockwise ratio of summed resistor PSD to summed QVNS PSD.

    Parameters
    ----------
    dataset : Dataset
    run_subset : iterable of int, optional
        Run ids to pool; all runs when omitted.
    fmax : float, optional
        Inclusive upper block midpoint.

    Returns
    -------
    RatioSpectrum
        ``kind`` is ``pooled_corrected`` when the dataset has been
        corrected, ``pooled_raw`` otherwise.
    """
    if run_subset is None:
        idx = np.arange(dataset.n_runs)
    else:
        ids = sorted(set(int(i) for i in run_subset))
        if not ids:
            raise InputError("run_subset is empty")
        idx = dataset.index_of(ids)
    mask = _block_mask(dataset.frequencies, fmax)
    num = dataset.s_r[idx][:, mask].sum(axis=0)
    den = dataset.s_q[idx][:, mask].sum(axis=0)
    kind = "pooled_corrected" if dataset.corrected else "pooled_raw"
    return RatioSpectrum(dataset.frequencies[mask], num / den, kind)


def single_run_ratio(dataset: Dataset, run_id: int, fmax: float | None = None) -> RatioSpectrum:
    k = dataset.index_of([run_id])[0]
    mask = _block_mask(dataset.frequencies, fmax)
    return RatioSpectrum(
        dataset.frequencies[mask], dataset.s_r[k, mask] / dataset.s_q[k, mask], "single_run"
    )


def correct_spectra(dataset: Dataset) -> Dataset:
    """Remove run-to-run reference-offset variation from the resistor PSDs.

    Each run's ``s_r`` becomes ``s_r - (a0_calc(i) - a0_calc_bar) * s_q``.
    """
    shift = dataset.a0_calc - dataset.a0_calc_bar
    runs = [
        RunSpectrum(
            r.run_id,
            r.frequencies,
            r.s_r - shift[k] * r.s_q,
            r.s_q,
            r.acquisition_time,
            r.timestamp,
        )
        for k, r in enumerate(dataset.runs)
    ]
    return Dataset(tuple(runs), dataset.calibrations, dataset.a0_calc_bar, corrected=True)


def spread_a0_calc(dataset: Dataset) -> float:
    a0 = dataset.a0_calc
    return float(a0.max() - a0.min())


# file formats --------------------------------------------------------


def _open_text(source, mode="r"):
    if hasattr(source, "read") or hasattr(source, "write"):
        return source, False
    return open(Path(source), mode, encoding="utf-8", newline=""), True


def _rows(source, header: Sequence[str], delimiter: str) -> tuple[list[str], list[list[str]]]:
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    finally:
        if owned:
            fh.close()
    if not rows:
        raise InputError("empty input: header row required")
    names = [c.strip() for c in rows[0]]
    absent = [h for h in header if h not in names]
    if absent:
        raise InputError(f"missing column(s) {absent}; header was {names}")
    return names, rows[1:]


def _number(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputError(f"cannot parse {what} value {text!r}") from None


def read_spectra(source, delimiter: str = ",") -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Parse a spectra table into ``{run_id: (frequencies, s_r, s_q)}``."""
    names, rows = _rows(source, SPECTRA_HEADER, delimiter)
    col = {h: names.index(h) for h in SPECTRA_HEADER}
    per_run: dict[int, list[tuple[float, float, float]]] = {}
    for line, row in enumerate(rows, start=2):
        if len(row) < len(names):
            raise InputError(f"spectra line {line}: expected {len(names)} fields")
        rid = _number(row[col["run_id"]], "run_id")
        if rid != int(rid):
            raise InputError(f"spectra line {line}: run_id must be an integer")
        per_run.setdefault(int(rid), []).append(
            (
                _number(row[col["frequency_hz"]], "frequency_hz"),
                _number(row[col["s_r"]], "s_r"),
                _number(row[col["s_q"]], "s_q"),
            )
        )
    out = {}
    for rid, recs in per_run.items():
        arr = np.array(sorted(recs), dtype=float)
        out[rid] = (arr[:, 0], arr[:, 1], arr[:, 2])
    return out


def read_calibrations(source, delimiter: str = ",") -> dict[int, dict[str, float]]:
    """Parse a calibration table into ``{run_id: fields}``.

    An optional ``weight`` column overrides acquisition-time weighting.
    """
    names, rows = _rows(source, CALIBRATION_HEADER, delimiter)
    cols = list(CALIBRATION_HEADER) + (["weight"] if "weight" in names else [])
    out: dict[int, dict[str, float]] = {}
    for line, row in enumerate(rows, start=2):
        rec = {c: _number(row[names.index(c)], c) for c in cols}
        rid = int(rec.pop("run_id"))
        if rid in out:
            raise CalibrationError(f"calibration line {line}: duplicate run_id {rid}")
        out[rid] = rec
    return out


def load_dataset(spectra_source, calib_source, delimiter: str = ",") -> Dataset:
    """Read spectra and calibration tables and assemble a validated dataset.

    Either argument may be a path or an open text stream.
    """
    spectra = read_spectra(spectra_source, delimiter)
    cals = read_calibrations(calib_source, delimiter)
    missing = sorted(set(spectra) - set(cals))
    if missing:
        raise CalibrationError(f"no calibration for run(s) {missing}")
    orphans = sorted(set(cals) - set(spectra))
    if orphans:
        raise CalibrationError(f"calibration(s) without spectra for run(s) {orphans}")
    runs, records = [], []
    for rid in sorted(spectra):
        f, sr, sq = spectra[rid]
        c = cals[rid]
        runs.append(RunSpectrum(rid, f, sr, sq, c["acquisition_hours"], c["day_offset"]))
        records.append(CalibrationRecord(rid, c["a0_calc"], c.get("weight")))
    return Dataset.build(runs, records)


def write_dataset(dataset: Dataset, spectra_target, calib_target, delimiter: str = ",") -> None:
    """Write the two tables :func:`load_dataset` reads.

    Floats are written with ``repr`` so a round trip is exact.
    """
    fh, owned = _open_text(spectra_target, "w")
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(SPECTRA_HEADER)
        for r in dataset.runs:
            for f, sr, sq in zip(r.frequencies, r.s_r, r.s_q):
                w.writerow((r.run_id, repr(float(f)), repr(float(sr)), repr(float(sq))))
    finally:
        if owned:
            fh.close()
    explicit = all(c.weight is not None for c in dataset.calibrations)
    fh, owned = _open_text(calib_target, "w")
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(CALIBRATION_HEADER + (("weight",) if explicit else ()))
        for r, c in zip(dataset.runs, dataset.calibrations):
            row = [r.run_id, repr(float(c.a0_calc)), repr(float(r.acquisition_time)),
                   repr(float(r.timestamp))]
            if explicit:
                row.append(repr(float(c.weight)))
            w.writerow(row)
    finally:
        if owned:
            fh.close()


def write_ratio_spectrum(spectrum: RatioSpectrum, target, delimiter: str = ",") -> None:
    fh, owned = _open_text(target, "w")
    try:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(("frequency_hz", "ratio"))
        for f, r in zip(spectrum.frequencies, spectrum.ratios):
            w.writerow((repr(float(f)), repr(float(r))))
    finally:
        if owned:
            fh.close()


def dataset_to_text(dataset: Dataset) -> tuple[str, str]:
    """Both tables as strings (handy for tests and hashing)."""
    s, c = io.StringIO(), io.StringIO()
    write_dataset(dataset, s, c)
    return s.getvalue(), c.getvalue()
