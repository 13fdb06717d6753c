"""Command-line entry point: ``optloss estimate|convert|schedule|scalefit``.

Exit codes: 0 success, 2 usage/format/data/io errors, 3 configuration and
input errors, 4 domain errors. The error class name is printed on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from optloss import __version__
from optloss.core import EstimatorConfig, NoiseGrid, OptimalLossCurve, Unit
from optloss.errors import AlignmentError, ConfigError, FormatError, IoError, OptLossError
from optloss.estimators import EstimatorKind, estimate_curve
from optloss.formulations import (
    DEFAULT_CONSTANTS,
    SPEC_NAMES,
    FormulationSpec,
    convert_loss_to_x0_ve,
    preconditioners,
    to_ve_sigma,
)
from optloss.ingest import _HEADER, dold_bytes, fnv1a64, load_dataset
from optloss.scaling import TrainingCurve, envelope, fit_offset_power_law, log_correlation
from optloss.schedule import (
    DEFAULT_THRESHOLD_FRAC,
    GAP_FLOOR_FRAC,
    GapBins,
    adaptive_pdf,
    default_weight_params,
    loss_weight,
    monotone_curve,
    schedule_export,
    update_gap_bins,
)

__all__ = ["main", "build_parser"]

ESTIMATE_COLUMNS = ("log_sigma", "j_star", "std_err", "repeats_used")
CONVERT_COLUMNS = ("sigma_hat", "x0_ve_loss", "c_skip", "c_out", "c_in", "c_noise")
_ALIGN_TOL = 1e-9


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_table(path, ncols: int, what: str) -> np.ndarray:
    """Numeric CSV with ``ncols`` leading columns; a non-numeric first row is a header."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = []
    for i, raw in enumerate(csv.reader(text.splitlines())):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) < ncols:
            raise FormatError(f"{path}: row {i} has {len(raw)} columns, need {ncols}")
        try:
            rows.append([float(c) for c in raw[:ncols]])
        except ValueError:
            if i == 0 and not rows:
                continue
            raise FormatError(f"{path}: row {i} is not numeric") from None
    if not rows:
        raise FormatError(f"{path}: no {what} rows")
    return np.array(rows, dtype=float)


def _parse_grid(text: str) -> NoiseGrid:
    try:
        lo, hi, steps = text.split(":")
        return NoiseGrid.linspace(float(lo), float(hi), int(steps))
    except ValueError as exc:
        raise ConfigError(f"--grid expects <logmin>:<logmax>:<steps>, got {text!r}") from exc


def _parse_correction(text: str | None) -> float | None:
    if text is None:
        return None
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--correction expects a number or 'inf', got {text!r}") from None


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("DOL_THREADS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"DOL_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError("thread count must be positive")
    return value


def _manifest(args, out, config: dict, started: float, checksum: int | None = None) -> None:
    if args.no_manifest:
        return
    doc = {
        "command": list(args.argv),
        "config": config,
        "seed": config.get("seed"),
        "version": __version__,
        "dataset_fnv1a64": None if checksum is None else f"{checksum:016x}",
        "duration_s": time.perf_counter() - started,
    }
    _write_text(str(out) + ".manifest.json", json.dumps(doc, indent=2, default=str) + "\n")


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def cmd_estimate(args) -> int:
    started = time.perf_counter()
    ds = load_dataset(args.data, args.format)
    grid = _parse_grid(args.grid)
    cfg = EstimatorConfig(
        subset_size=args.subset_size,
        xt_samples=args.xt_samples,
        max_repeats=args.repeats,
        correction=_parse_correction(args.correction),
        seed=args.seed,
        rel_tol=args.rel_tol,
    )
    unit = Unit.parse(args.unit)
    report = estimate_curve(ds, grid, args.estimator, cfg, threads=_threads(args.threads))
    curve = report.curve.to_unit(unit)
    rows = zip(grid.log_sigmas, curve.j_star, curve.std_err, report.repeats_used)
    _write_csv(args.out, ESTIMATE_COLUMNS, rows)
    resolved = report.config
    config = {
        "estimator": report.estimator.value,
        "grid": args.grid,
        "subset_size": resolved.subset_size,
        "xt_samples": resolved.xt_samples,
        "max_repeats": resolved.max_repeats,
        "correction": _jsonable(resolved.correction),
        "seed": resolved.seed,
        "rel_tol": resolved.rel_tol,
        "unit": unit.value,
        "a_hat": report.a_hat,
        "n_samples": ds.n_samples,
        "dim": ds.dim,
    }
    _manifest(args, args.out, config, started, fnv1a64(dold_bytes(ds)[_HEADER.size:]))
    return 0


_CONSTANT_FLAGS = {name: "--" + name.replace("_", "-") for name in DEFAULT_CONSTANTS}


def cmd_convert(args) -> int:
    started = time.perf_counter()
    overrides = {
        name: getattr(args, name) for name in DEFAULT_CONSTANTS if getattr(args, name) is not None
    }
    spec = FormulationSpec(args.spec, overrides)
    table = _read_table(args.input, 2, "(native_sigma, native_loss)")
    rows = []
    for native_sigma, native_loss in table:
        s = to_ve_sigma(spec, native_sigma)
        pc = preconditioners(spec, s)
        rows.append((s, convert_loss_to_x0_ve(spec, s, native_loss),
                     pc.c_skip, pc.c_out, pc.c_in, pc.c_noise))
    _write_csv(args.out, CONVERT_COLUMNS, rows)
    _manifest(args, args.out, {"spec": spec.name, "constants": spec.constants, "seed": None},
              started)
    return 0


def _curve_from_csv(path) -> OptimalLossCurve:
    table = _read_table(path, 3, "estimate")
    grid = NoiseGrid(tuple(table[:, 0]))
    return OptimalLossCurve(grid, table[:, 1], table[:, 2])


def _aligned(grid: NoiseGrid, log_sigma: np.ndarray, path) -> None:
    ref = np.asarray(grid.log_sigmas)
    if log_sigma.shape != ref.shape or np.max(np.abs(log_sigma - ref)) > _ALIGN_TOL:
        raise AlignmentError(f"{path}: log_sigma column does not match the J* grid")


def cmd_schedule(args) -> int:
    started = time.perf_counter()
    curve = _curve_from_csv(args.jstar)
    params = default_weight_params(
        curve, a=args.a, w_star=args.w_star, sigma_star=args.sigma_star, mu=args.mu,
        varsigma=args.varsigma, threshold_frac=args.threshold_frac,
    )
    mono = monotone_curve(curve)
    scale = args.a_hat if args.a_hat is not None else float(mono.max())
    floor = GAP_FLOOR_FRAC * scale
    weights = np.array([loss_weight(curve, params, s, mono) for s in curve.grid.sigmas])
    bins = None
    for path in args.gaps or ():
        table = _read_table(path, 2, "(log_sigma, measured_loss)")
        _aligned(curve.grid, table[:, 0], path)
        observed = weights * (table[:, 1] - curve.j_star)
        if bins is None:
            bins = GapBins.from_observation(curve.grid, observed, args.decay, floor)
        else:
            bins = update_gap_bins(bins, observed)
    if bins is None:
        bins = GapBins(curve.grid, np.full(len(curve.grid), floor), args.decay, floor)
    pdf = adaptive_pdf(bins)
    doc = schedule_export(curve, params, pdf, args.threshold_frac, args.decay, floor)
    _write_text(args.out, json.dumps(doc, indent=2) + "\n")
    _manifest(args, args.out, {**doc["params"], "seed": None}, started)
    return 0


def _parse_offset(text: str):
    if text == "search":
        return "search"
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--offset expects 'search' or a number, got {text!r}") from None


def cmd_scalefit(args) -> int:
    started = time.perf_counter()
    curves = []
    for path in args.curves:
        table = _read_table(path, 2, "(flops, loss)")
        curves.append(TrainingCurve(Path(path).stem, tuple(map(tuple, table))))
    env = envelope(curves)
    if args.skip_first < 0:
        raise ConfigError("--skip-first must be nonnegative")
    fit = fit_offset_power_law(env, _parse_offset(args.offset), args.skip_first)
    used = np.asarray(env[args.skip_first:], dtype=float)
    doc = fit.to_json()
    doc["rho_uncorrected"] = log_correlation(used[:, 0], used[:, 1], 0.0)
    doc["envelope"] = [[float(f), float(j)] for f, j in env]
    _write_text(args.out, json.dumps(doc, indent=2) + "\n")
    _manifest(args, args.out, {"offset": args.offset, "skip_first": args.skip_first,
                               "curves": list(args.curves), "seed": None}, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optloss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True)
        p.add_argument("--no-manifest", action="store_true")

    p = sub.add_parser("estimate", help="estimate the optimal-loss curve of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("dold", "csv"), default="dold")
    p.add_argument("--estimator", choices=[k.value for k in EstimatorKind], default="cdol")
    p.add_argument("--grid", default="-3:2.3:16")
    p.add_argument("--subset-size", type=int)
    p.add_argument("--xt-samples", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--correction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--unit", choices=("total", "per-dim"), default="total")
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.add_argument("--threads", type=int)
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("convert", help="map a native loss curve to x0 prediction under VE")
    p.add_argument("--spec", required=True, help="one of " + ", ".join(SPEC_NAMES))
    p.add_argument("--in", dest="input", required=True)
    for name, flag in _CONSTANT_FLAGS.items():
        p.add_argument(flag, dest=name, type=float)
    common(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("schedule", help="derive a loss weight and noise density")
    p.add_argument("--jstar", required=True)
    p.add_argument("--gaps", action="append",
                   help="measured losses; repeat to feed successive EMA updates")
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--w-star", type=float)
    p.add_argument("--sigma-star", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--varsigma", type=float, default=0.5)
    p.add_argument("--threshold-frac", type=float, default=DEFAULT_THRESHOLD_FRAC)
    p.add_argument("--decay", type=float, default=0.9)
    p.add_argument("--a-hat", type=float, help="data second moment; sets the gap floor scale")
    common(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("scalefit", help="fit an offset power law to training curves")
    p.add_argument("--curves", nargs="+", required=True)
    p.add_argument("--offset", default="search")
    p.add_argument("--skip-first", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_scalefit)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # "--grid -3:2:6" would otherwise read the value as an option.
    for i in range(len(argv) - 1):
        if argv[i] == "--grid" and argv[i + 1].startswith("-"):
            argv[i:i + 2] = [f"--grid={argv[i + 1]}", ""]
    argv = [a for a in argv if a != ""]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = ["optloss", *argv]
    try:
        return args.func(args)
    except OptLossError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
