"""Command line front end.

Usage::

    jntsel simulate --out sim/ --seed 1
    jntsel select --spectra sim/spectra.csv --calibration sim/calibration.csv --out run/
    jntsel trend --spectra ... --calibration ... --fmax 1250kHz --order 8
    jntsel fit --spectra ... --calibration ... --fmax 1250kHz --order 8
    jntsel bp-test --spectra ... --calibration ... --fmax 1250kHz --order 8

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config error.
"""

from __future__ import annotations

import json
import logging
import re
import sys
from functools import wraps
from pathlib import Path

import click

from . import polyfit, simulate, trend, uncertainty
from .crossval import CvConfig
from .data_model import Dataset, load_dataset, pool_ratio, write_dataset, write_ratio_spectrum
from .errors import ConfigError, InputError, JntselError
from .physics import boltzmann_from_ratio, load_physical_config
from .polyfit import CANDIDATE_ORDERS, PolyModel
from .reports import (
    TREND_CSV,
    TREND_HEADER,
    ReportWriter,
    trend_row,
    write_fit_plot,
    write_scan_reports,
)

log = logging.getLogger("jntsel")

EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 2, 3, 4
FAST_SPLITS, FAST_BOOT = 2000, 5000
OUT_ENV = "JNTSEL_OUTPUT_DIR"

_UNITS = {"": 1.0, "hz": 1.0, "khz": 1e3, "mhz": 1e6}


class Frequency(click.ParamType):
    """Frequency with optional unit: ``1250kHz``, ``1.4MHz``, ``900`` (Hz)."""

    name = "frequency"

    def convert(self, value, param, ctx):
        if isinstance(value, (int, float)):
            return float(value)
        m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([a-zA-Z]*)\s*", str(value))
        if not m or m.group(2).lower() not in _UNITS:
            self.fail(f"{value!r} is not a frequency (e.g. 1250kHz)", param, ctx)
        try:
            return float(m.group(1)) * _UNITS[m.group(2).lower()]
        except ValueError:
            self.fail(f"{value!r} is not a frequency", param, ctx)


FREQ = Frequency()


def _orders(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"bad order list {text!r}") from None


def guarded(command: str):
    """Map package errors onto exit codes and flush a failure manifest."""

    def deco(fn):
        @wraps(fn)
        def inner(*args, **kwargs):
            ctx = click.get_current_context()
            try:
                return fn(*args, **kwargs)
            except JntselError as exc:
                click.echo(f"error: {exc}", err=True)
                writer = ctx.meta.get("writer")
                if writer is None and kwargs.get("outdir"):
                    writer = ReportWriter(Path(kwargs["outdir"]))
                if writer is not None:
                    writer.manifest(command, kwargs.get("seed", 0), ctx.meta.get("config", {}), "failed")
                ctx.exit(exc.exit_code)
            except OSError as exc:
                click.echo(f"error: {exc}", err=True)
                ctx.exit(EXIT_INPUT)

        return inner

    return deco


def data_options(fn):
    fn = click.option("--calibration", "calib_path", required=True,
                      type=click.Path(dir_okay=False), help="Calibration table.")(fn)
    fn = click.option("--spectra", "spectra_path", required=True,
                      type=click.Path(dir_okay=False), help="Spectra table.")(fn)
    return fn


def out_option(fn):
    return click.option(
        "--out", "outdir", envvar=OUT_ENV, default="jntsel-out", show_default=True,
        type=click.Path(file_okay=False), help=f"Output directory (env {OUT_ENV}).",
    )(fn)


def _load(spectra_path, calib_path) -> Dataset:
    for p in (spectra_path, calib_path):
        if not Path(p).is_file():
            raise InputError(f"no such file: {p}")
    return load_dataset(spectra_path, calib_path)


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def main(verbose):
    """Spectral model selection and offset uncertainty for noise thermometry."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@data_options
@click.option("--grid-start", type=FREQ, default="200kHz", show_default=True)
@click.option("--grid-stop", type=FREQ, default="1400kHz", show_default=True)
@click.option("--grid-step", type=FREQ, default="25kHz", show_default=True)
@click.option("--n-splits", type=int, default=None, help="Random five-way splits [20000].")
@click.option("--orders", default=",".join(map(str, CANDIDATE_ORDERS)), show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--k-lowest", type=int, default=5, show_default=True)
@click.option("--validation", type=click.Choice(["corrected", "raw"]), default="corrected",
              show_default=True, help="Spectra pooled for CV validation folds.")
@click.option("--physics", "physics_path", type=click.Path(dir_okay=False), default=None,
              help="Physical config; adds a Boltzmann-constant line to the summary.")
@click.option("--workers", type=int, default=1, show_default=True, help="Worker threads.")
@click.option("--fast", is_flag=True, help=f"CI mode: {FAST_SPLITS} splits unless --n-splits given.")
@out_option
@guarded("select")
def select(spectra_path, calib_path, grid_start, grid_stop, grid_step, n_splits, orders,
           seed, k_lowest, validation, physics_path, workers, fast, outdir):
    """Scan fitting bandwidths and select (fmax, d) by minimum total uncertainty."""
    ctx = click.get_current_context()
    if n_splits is None:
        n_splits = FAST_SPLITS if fast else 20_000
    if grid_step <= 0 or grid_start >= grid_stop:
        raise ConfigError("need grid_start < grid_stop and grid_step > 0")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    cfg = CvConfig(n_splits=n_splits, candidate_orders=_orders(orders), seed=seed,
                   validation=validation)
    config = {
        "spectra": str(spectra_path), "calibration": str(calib_path),
        "grid_start": grid_start, "grid_stop": grid_stop, "grid_step": grid_step,
        "n_splits": n_splits, "orders": list(cfg.candidate_orders), "seed": seed,
        "k_lowest": k_lowest, "validation": validation,
    }
    ctx.meta["config"] = config
    physical = load_physical_config(physics_path) if physics_path else None
    data = _load(spectra_path, calib_path)
    writer = ReportWriter(Path(outdir))
    ctx.meta["writer"] = writer
    scan = uncertainty.bandwidth_scan(
        data, cfg, grid_start, grid_stop, grid_step, k=k_lowest, workers=workers
    )
    write_scan_reports(writer, scan, cfg.candidate_orders, "data")
    star = scan.star
    fitted = polyfit.fit(PolyModel(star.selected_d, cfg.f0), pool_ratio(data), star.fmax)
    write_fit_plot(writer, fitted, pool_ratio(data))
    writer.text("fit_selected.json", json.dumps(fitted.to_dict(), indent=2) + "\n")
    if physical is not None:
        k = boltzmann_from_ratio(physical, star.a0_hat)
        writer.text("boltzmann.txt", f"k = {k!r} J/K (from a0 = {star.a0_hat!r})\n")
    writer.manifest("select", seed, config)
    click.echo((Path(outdir) / "summary.txt").read_text(encoding="utf-8"), nl=False)


@main.command("trend")
@data_options
@click.option("--fmax", type=FREQ, required=True)
@click.option("--order", "d", type=int, required=True)
@click.option("--n-boot", type=int, default=None, help="Bootstrap replicates [50000].")
@click.option("--n-splits", type=int, default=None, help="Splits for the pooled sigma_tot [20000].")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--fast", is_flag=True, help=f"CI mode: {FAST_BOOT} replicates, {FAST_SPLITS} splits.")
@out_option
@guarded("trend")
def trend_cmd(spectra_path, calib_path, fmax, d, n_boot, n_splits, seed, workers, fast, outdir):
    """Per-run offsets, linear trend with bootstrap errors, and consistency tests."""
    ctx = click.get_current_context()
    n_boot = n_boot or (FAST_BOOT if fast else 50_000)
    n_splits = n_splits or (FAST_SPLITS if fast else 20_000)
    config = {"spectra": str(spectra_path), "calibration": str(calib_path), "fmax": fmax,
              "order": d, "n_boot": n_boot, "n_splits": n_splits, "seed": seed}
    ctx.meta["config"] = config
    model = PolyModel(d)
    data = _load(spectra_path, calib_path)
    writer = ReportWriter(Path(outdir))
    ctx.meta["writer"] = writer
    offsets = trend.per_run_offsets(data, model, fmax)
    writer.csv("plot_run_offsets.csv", ("run_id", "day", "offset", "sigma"),
               zip(offsets.run_ids, offsets.t, offsets.y, offsets.v**0.5))
    tf = trend.bootstrap_trend(offsets, n_boot=n_boot, seed=seed, workers=workers)
    param_se = trend.parametric_bootstrap_trend(offsets, n_boot=n_boot, seed=seed, workers=workers)
    raw = pool_ratio(data)
    pooled_fit = polyfit.fit(model, raw, fmax)
    bp = trend.breusch_pagan(pooled_fit, raw, fmax)
    pooled, _ = uncertainty.bandwidth_stats(data, CvConfig(n_splits=n_splits, seed=seed), fmax)
    text, row = trend_row(fmax, d, tf, param_se, bp, pooled, data.a0_calc_bar)
    writer.table("trend", "Linear trend of per-run offsets (x1e6)", TREND_HEADER, [text],
                 TREND_CSV, [row])
    writer.manifest("trend", seed, config)
    click.echo((Path(outdir) / "trend.txt").read_text(encoding="utf-8"), nl=False)
    click.echo(f"parametric/nonparametric slope SE: {param_se / tf.se_beta1:.3f}")
    click.echo(f"Breusch-Pagan p = {bp.p_value:.3g} (LM {bp.lm:.2f}, {bp.df} dof)")


@main.command("simulate")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-runs", type=int, default=45, show_default=True)
@click.option("--truth", type=click.Choice(["d8", "d6"]), default="d8", show_default=True,
              help="Order-8 experimental-fit truth or the derived order-6 truth.")
@click.option("--coeffs", default=None, help="Explicit truth a0,a2,...,ad (overrides --truth).")
@click.option("--noise-sd", type=float, default=None, help="Per-run SD [reference scale].")
@click.option("--noise-from", "noise_from", nargs=2, type=click.Path(dir_okay=False), default=None,
              metavar="SPECTRA CALIBRATION",
              help="Estimate per-run SDs from an experimental dataset.")
@click.option("--noise-order", type=int, default=8, show_default=True)
@click.option("--noise-fmax", type=FREQ, default="1250kHz", show_default=True)
@click.option("--trend-slope", type=float, default=0.0, show_default=True, help="Offset drift per day.")
@out_option
@guarded("simulate")
def simulate_cmd(seed, n_runs, truth, coeffs, noise_sd, noise_from, noise_order, noise_fmax,
                 trend_slope, outdir):
    """Write a synthetic spectra/calibration pair on the 1.8 kHz grid."""
    ctx = click.get_current_context()
    if coeffs:
        try:
            truth_coeffs = tuple(float(c) for c in coeffs.split(","))
        except ValueError:
            raise ConfigError(f"bad coefficient list {coeffs!r}") from None
    else:
        truth_coeffs = simulate.REFERENCE_COEFFS if truth == "d8" else simulate.sixth_order_truth()
    if noise_from:
        experimental = _load(*noise_from)
        if experimental.n_runs != n_runs:
            raise ConfigError(f"--noise-from has {experimental.n_runs} runs, --n-runs is {n_runs}")
        sd = tuple(simulate.estimate_run_noise_sd(experimental, PolyModel(noise_order), noise_fmax))
    elif noise_sd is not None:
        sd = noise_sd
    else:
        sd = simulate.reference_noise_sd(n_runs)
    cfg = simulate.SimConfig(truth_coeffs=truth_coeffs, n_runs=n_runs, per_run_noise_sd=sd,
                             seed=seed, trend_slope=trend_slope)
    config = {"seed": seed, "n_runs": n_runs, "truth": list(truth_coeffs),
              "noise_sd": sd if isinstance(sd, float) else list(sd), "trend_slope": trend_slope}
    ctx.meta["config"] = config
    data = simulate.simulate_dataset(cfg)
    writer = ReportWriter(Path(outdir))
    ctx.meta["writer"] = writer
    spectra, calib = writer._path("spectra.csv"), writer._path("calibration.csv")
    write_dataset(data, spectra, calib)
    writer.manifest("simulate", seed, config)
    click.echo(f"wrote {data.n_runs} runs x {data.frequencies.size} blocks to {outdir}")


@main.command("fit")
@data_options
@click.option("--fmax", type=FREQ, required=True)
@click.option("--order", "d", type=int, required=True)
@click.option("--corrected", is_flag=True, help="Fit the corrected pooled spectrum.")
@out_option
@guarded("fit")
def fit_cmd(spectra_path, calib_path, fmax, d, corrected, outdir):
    """Fit one order at one bandwidth to the pooled ratio spectrum."""
    from .data_model import correct_spectra

    ctx = click.get_current_context()
    config = {"spectra": str(spectra_path), "calibration": str(calib_path), "fmax": fmax,
              "order": d, "corrected": corrected}
    ctx.meta["config"] = config
    data = _load(spectra_path, calib_path)
    spec = pool_ratio(correct_spectra(data) if corrected else data)
    fitted = polyfit.fit(PolyModel(d), spec, fmax)
    writer = ReportWriter(Path(outdir))
    ctx.meta["writer"] = writer
    report = fitted.to_dict()
    report["a0_minus_ref"] = fitted.a0 - data.a0_calc_bar
    writer.text("fit.json", json.dumps(report, indent=2) + "\n")
    write_fit_plot(writer, fitted, spec)
    write_ratio_spectrum(spec, writer._path("ratio_spectrum.csv"))
    writer.manifest("fit", 0, config)
    click.echo(f"d={d} fmax={fmax:g} Hz  a0-a0calc = {report['a0_minus_ref']:.4g}"
               f"  sigma_a0 = {fitted.sigma_a0_ran:.4g}  n = {fitted.n_points}")
    for i, (c, v) in enumerate(zip(fitted.coeffs, fitted.coeff_cov.diagonal())):
        click.echo(f"  a{2 * i:<2d} = {c: .6e} ({v ** 0.5:.2e})")


@main.command("bp-test")
@data_options
@click.option("--fmax", type=FREQ, required=True)
@click.option("--order", "d", type=int, required=True)
@guarded("bp-test")
def bp_test(spectra_path, calib_path, fmax, d):
    """Breusch-Pagan test on the pooled-spectrum fit residuals."""
    data = _load(spectra_path, calib_path)
    spec = pool_ratio(data)
    res = trend.breusch_pagan(polyfit.fit(PolyModel(d), spec, fmax), spec, fmax)
    click.echo(f"LM = {res.lm:.4f}  df = {res.df}  n = {res.n}  p = {res.p_value:.4g}")


__all__ = ["main"]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
