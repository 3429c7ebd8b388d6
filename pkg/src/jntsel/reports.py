"""Fixed-width and delimited report writers.

Every table is written twice: ``<name>.txt`` for reading and
``<name>.csv`` at full precision for machines.  Offsets and
uncertainties in the text tables are scaled by 1e6.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .crossval import SelectionFractions
from .data_model import RatioSpectrum
from .polyfit import PolyFit, predict
from .uncertainty import ScanResult, k_lowest

__all__ = [
    "ReportWriter",
    "fmt_e6",
    "config_hash",
    "selection_rows",
    "scan_rows",
    "summary_rows",
]

PPM = 1e6


def fmt_e6(value: float, decimals: int = 2) -> str:
    """``value * 1e6`` rounded to ``decimals`` places."""
    return f"{value * PPM:.{decimals}f}"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _text_table(header: Sequence[str], rows: Sequence[Sequence[str]], title: str = "") -> str:
    cells = [list(header)] + [list(r) for r in rows]
    widths = [max(len(str(c[j])) for c in cells) for j in range(len(header))]
    line = lambda r: "  ".join(str(v).rjust(w) for v, w in zip(r, widths))  # noqa: E731
    out = [title] if title else []
    out += [line(header), "-" * len(line(header))]
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


class ReportWriter:
    """Writes artifacts into one directory and remembers what it wrote."""

    def __init__(self, outdir: Path):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def _path(self, name: str) -> Path:
        self.written.append(name)
        return self.outdir / name

    def csv(self, name: str, header: Sequence[str], rows) -> None:
        with open(self._path(name), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])

    def text(self, name: str, content: str) -> None:
        with open(self._path(name), "w", encoding="utf-8", newline="") as fh:
            fh.write(content)

    def table(self, stem: str, title: str, header, text_rows, csv_header, csv_rows) -> str:
        content = _text_table(header, text_rows, title)
        self.text(f"{stem}.txt", content)
        self.csv(f"{stem}.csv", csv_header, csv_rows)
        return content

    def manifest(self, command: str, seed: int, config: dict, status: str = "ok") -> None:
        record = {
            "command": command,
            "status": status,
            "seed": seed,
            "config_hash": config_hash(config),
            "config": config,
            "artifacts": sorted(set(self.written)),
        }
        path = self.outdir / "manifest.json"
        path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


# table bodies ---------------------------------------------------------


def selection_rows(fractions: Sequence[SelectionFractions], orders: Sequence[int]):
    text, raw = [], []
    for sf in fractions:
        vals = [sf.p.get(d, 0.0) for d in orders]
        text.append([f"{sf.fmax / 1e3:g}"] + [f"{v:.4f}" for v in vals])
        raw.append([sf.fmax] + vals)
    return text, raw


def scan_rows(scan: ScanResult):
    ref = scan.reference
    text, raw = [], []
    for s in scan.stats:
        text.append([
            f"{s.fmax / 1e3:g}", str(s.selected_d),
            fmt_e6(s.a0_hat - ref), fmt_e6(s.sigma_ran), fmt_e6(s.a0_bar - ref),
            fmt_e6(s.sigma_alpha), fmt_e6(s.sigma_beta, 3), fmt_e6(s.sigma_tot, 3),
        ])
        raw.append([
            s.fmax, s.selected_d, s.a0_hat - ref, s.sigma_ran, s.a0_bar - ref,
            s.sigma_alpha, s.sigma_beta, s.sigma_tot,
        ])
    return text, raw


def summary_rows(scan: ScanResult, label: str = "data"):
    s, ref = scan.star, scan.reference
    text = [[
        label, f"{s.fmax / 1e3:g}", str(s.selected_d), fmt_e6(s.a0_hat - ref), fmt_e6(s.sigma_ran),
        fmt_e6(s.a0_bar - ref), fmt_e6(s.sigma_alpha), fmt_e6(s.sigma_beta),
        fmt_e6(scan.sigma_tot_star), fmt_e6(scan.sigma_fmax), fmt_e6(scan.sigma_tot_final),
    ]]
    raw = [[
        label, s.fmax, s.selected_d, s.a0_hat - ref, s.sigma_ran, s.a0_bar - ref,
        s.sigma_alpha, s.sigma_beta, scan.sigma_tot_star, scan.sigma_fmax, scan.sigma_tot_final,
    ]]
    return text, raw


SCAN_HEADER = ("fmax_kHz", "d", "a0-a0calc", "sigma_ran", "a0bar-a0calc",
               "sigma_alpha", "sigma_beta", "sigma_tot")
SCAN_CSV = ("fmax_hz", "d", "a0_minus_ref", "sigma_ran", "a0bar_minus_ref",
            "sigma_alpha", "sigma_beta", "sigma_tot")
SUMMARY_HEADER = ("", "fmax_kHz", "d", "a0-a0calc", "sigma_ran", "a0bar-a0calc",
                  "sigma_alpha", "sigma_beta", "sigma_tot*", "sigma_fmax", "sigma_tot,final")
SUMMARY_CSV = ("label", "fmax_hz", "d", "a0_minus_ref", "sigma_ran", "a0bar_minus_ref",
               "sigma_alpha", "sigma_beta", "sigma_tot_star", "sigma_fmax", "sigma_tot_final")


def write_scan_reports(w: ReportWriter, scan: ScanResult, orders: Sequence[int], label: str) -> None:
    """Selection fractions, per-bandwidth table, summary and plot data."""
    t, r = selection_rows(scan.fractions, orders)
    w.table(
        "selection_fractions", "Model selection fractions p(d)",
        ["fmax_kHz"] + [f"d={d}" for d in orders], t,
        ["fmax_hz"] + [f"p_d{d}" for d in orders], r,
    )
    t, r = scan_rows(scan)
    w.table("scan", "Per-bandwidth results (x1e6)", SCAN_HEADER, t, SCAN_CSV, r)
    t, r = summary_rows(scan, label)
    w.table("summary", "Selected bandwidth and uncertainty (x1e6)", SUMMARY_HEADER, t, SUMMARY_CSV, r)
    if scan.sensitivity:
        w.csv("sigma_fmax_sensitivity.csv", ("k", "sigma_fmax"),
              [(k, v) for k, v in sorted(scan.sensitivity.items())])
    ref = scan.reference
    w.csv("plot_selected_order.csv", ("fmax_hz", "d"), [(s.fmax, s.selected_d) for s in scan.stats])
    w.csv("plot_sigma_tot.csv", ("fmax_hz", "sigma_tot"), [(s.fmax, s.sigma_tot) for s in scan.stats])
    w.csv(
        "plot_offset.csv", ("fmax_hz", "a0_minus_ref", "lower", "upper"),
        [(s.fmax, s.a0_hat - ref, s.a0_hat - ref - s.sigma_tot, s.a0_hat - ref + s.sigma_tot)
         for s in scan.stats],
    )
    best = sorted(k_lowest(scan.stats, scan.k_lowest), key=lambda s: s.fmax)
    w.csv(
        "plot_k_lowest.csv", ("fmax_hz", "d", "a0_minus_ref", "sigma_tot"),
        [(s.fmax, s.selected_d, s.a0_hat - ref, s.sigma_tot) for s in best],
    )


def write_fit_plot(w: ReportWriter, fitted: PolyFit, spectrum: RatioSpectrum, name: str = "plot_ratio_fit.csv") -> None:
    s = spectrum.truncate(fitted.fmax)
    pred = predict(fitted, s.frequencies)
    w.csv(name, ("frequency_hz", "observed", "predicted", "residual"),
          zip(s.frequencies, s.ratios, pred, s.ratios - pred))


TREND_HEADER = ("fmax_kHz", "d", "intercept(se)", "slope/day(se)", "p_trend",
                "chi2_obs", "p_consistency", "pooled a0-a0calc(sigma_tot)")
TREND_CSV = ("fmax_hz", "d", "intercept", "se_intercept", "slope_per_day", "se_slope",
             "p_trend", "null_exceedances", "n_boot", "chi2_obs", "p_consistency",
             "parametric_se_slope", "bp_lm", "bp_df", "bp_p_value",
             "pooled_a0_minus_ref", "pooled_sigma_tot")


def fmt_p(p: float, n_boot: int) -> str:
    if p == 0 and n_boot:
        return f"<{1 / n_boot:.1g}"
    return f"{p:.3f}"


def trend_row(fmax, d, tf, param_se, bp, pooled, ref):
    """Text and csv rows for one bandwidth; ``pooled`` is a MixtureStats or None."""
    off = pooled.a0_hat - ref if pooled is not None else float("nan")
    tot = pooled.sigma_tot if pooled is not None else float("nan")
    text = [
        f"{fmax / 1e3:g}", str(d),
        f"{tf.beta0 * PPM:.2f}({tf.se_beta0 * PPM:.2f})",
        f"{tf.beta1 * PPM:.3f}({tf.se_beta1 * PPM:.3f})",
        fmt_p(tf.p_trend, tf.n_boot), f"{tf.chi2_obs:.1f}", f"{tf.p_consistency:.3f}",
        f"{off * PPM:.2f}({tot * PPM:.2f})",
    ]
    raw = [
        fmax, d, tf.beta0, tf.se_beta0, tf.beta1, tf.se_beta1, tf.p_trend,
        tf.null_exceedances, tf.n_boot, tf.chi2_obs, tf.p_consistency, param_se,
        bp.lm, bp.df, bp.p_value, off, tot,
    ]
    return text, raw
