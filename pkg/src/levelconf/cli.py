"""Command-line front end.

Subcommands
-----------
simulate   run a coverage experiment from a TOML config and write the report CSV
region     confidence region for a user sample (contour, raster and SVG)
kde-eval   evaluate a fitted density estimator at given points
constants  kernel constants as CSV

Exit codes: 0 success, 1 usage, 2 numeric failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapFailure
from .density import DataFormatError, DensityEstimator, read_dataset
from .evt import BandwidthTooLargeError
from .flow import NonFiniteFieldError
from .geometry import GridSpec, write_contour_csv
from .harness import (
    METHODS,
    ConfigError,
    ExperimentFailure,
    confidence_region,
    emit_report,
    load_config,
    run_case,
)
from .kernel import KERNELS, constants, get_kernel
from .models import Elliptic
from .regions import region_svg, write_raster_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

# Methods whose region is built around the bias-corrected contour.
_BC_CONTOUR = {"V.bc", "V.ls", "C4", "C4*", "C5*", "C6*"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _writer(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


# --------------------------------------------------------------------------- #
# subcommands

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    workers = args.threads or os.cpu_count() or 1
    report = run_case(cfg, workers=min(workers, cfg.runs), overlay=args.svg is not None)
    emit_report(report, args.out)
    if args.svg is not None:
        out = Path(args.svg)
        out.mkdir(parents=True, exist_ok=True)
        for r in report.runs:
            if r.svg is not None:
                (out / f"run_{r.run:04d}.svg").write_text(r.svg, encoding="utf-8")
    for r in report.runs:
        if r.error is not None:
            print(f"run {r.run} aborted: {r.error}", file=sys.stderr)
    return EXIT_OK


def _parse_case(spec: str) -> Elliptic:
    name, _, value = spec.partition(":")
    if name != "elliptic" or not value:
        raise UsageError("--case must look like elliptic:A")
    try:
        return Elliptic(float(value))
    except ValueError as exc:
        raise UsageError(f"--case: {exc}") from None


def cmd_region(args) -> int:
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if (args.level is None) == (args.prob is None):
        raise UsageError("give exactly one of --level or --prob")
    if args.prob is not None:
        if args.case is None:
            raise UsageError("--prob needs --case elliptic:A")
        if not 0 < args.prob < 1:
            raise UsageError("--prob must lie in (0, 1)")
        level = _parse_case(args.case).level_of_probability(args.prob)
    else:
        if not args.level > 0:
            raise UsageError("--level must be positive")
        level = args.level
    data = read_dataset(args.data)
    if data.d != 2:
        raise UsageError("region needs two-dimensional data")
    options = {}
    if args.h is not None:
        options["bandwidth_rule"] = {"h": args.h, "l": args.l or args.h, "g": args.g or args.h}
    try:
        built, run = confidence_region(data, level, args.method, alpha=args.alpha, B=args.B,
                                       seed=args.seed, kernel=args.kernel, **options)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None

    contour = run.contour("bc", run.f_bc) if args.method in _BC_CONTOUR else run.contour("f", run.f_hat)
    raster = GridSpec(run.grid.lower, run.grid.upper, args.raster_resolution)
    mask = built.region.mask(raster)
    prefix = Path(args.out)
    write_contour_csv(contour, f"{prefix}_contour.csv")
    write_raster_csv(built.region, raster, f"{prefix}_region.csv", mask=mask)
    svg = region_svg(built.region, raster, contours=[(contour, "#d62728")], points=data.points,
                     mask=mask)
    Path(f"{prefix}.svg").write_text(svg, encoding="utf-8")
    print(f"method,{args.method}")
    print(f"level,{_fmt(level)}")
    print(f"quantile,{_fmt(built.quantile)}")
    print(f"bandwidth_h,{' '.join(_fmt(v) for v in run.bw.h)}")
    print(f"contour_vertices,{len(contour.vertices())}")
    print(f"region_cells,{int(mask.sum())}")
    return EXIT_OK


def cmd_kde_eval(args) -> int:
    data = read_dataset(args.data)
    pts = read_dataset(args.points).points if args.points else None
    if pts is None:
        raise UsageError("--points is required")
    if pts.shape[1] != data.d:
        raise UsageError(f"points have dimension {pts.shape[1]}, data {data.d}")
    kernel = get_kernel(args.kernel)
    if kernel.dimension != data.d:
        raise UsageError(f"kernel {args.kernel} is {kernel.dimension}-dimensional, data {data.d}")
    if args.bc:
        if args.l is None:
            raise UsageError("--bc needs --l")
        est = DensityEstimator(data, kernel, args.h, "bias_corrected", args.l)
    else:
        est = DensityEstimator(data, kernel, args.h)
    val, grad = est.value_and_grad(pts)
    fh, close = _writer(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(data.d)] + ["density", "grad_norm"])
        for p, v, g in zip(pts, val, np.linalg.norm(grad, axis=1)):
            w.writerow([_fmt(t) for t in p] + [_fmt(v), _fmt(g)])
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_constants(args) -> int:
    if args.kernel not in KERNELS:
        raise UsageError(f"unknown kernel {args.kernel!r}; known: {', '.join(sorted(KERNELS))}")
    kc = constants(get_kernel(args.kernel))
    fh, close = _writer(args.out)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        for name, value in kc.as_rows():
            w.writerow([name, _fmt(value)])
    finally:
        if close:
            fh.close()
    return EXIT_OK


# --------------------------------------------------------------------------- #
# parser

def _positive_vector(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("bandwidths must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="levelconf", description="Confidence regions for density level sets.")
    p.add_argument("--version", action="version", version=f"levelconf {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a coverage experiment")
    s.add_argument("--config", required=True, help="TOML experiment file")
    s.add_argument("--out", required=True, help="report CSV path")
    s.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.add_argument("--svg", default=None, metavar="DIR", help="write per-run overlay SVGs here")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("region", help="confidence region for a sample")
    r.add_argument("--data", required=True, help="headerless CSV, one point per row")
    r.add_argument("--level", type=float, default=None, help="density level c")
    r.add_argument("--prob", type=float, default=None, help="probability content defining c")
    r.add_argument("--case", default=None, help="model for --prob, e.g. elliptic:1")
    r.add_argument("--method", default="V.e", choices=METHODS)
    r.add_argument("--alpha", type=float, default=0.1)
    r.add_argument("--B", type=int, default=250, help="bootstrap replications")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--kernel", default="sim2d")
    r.add_argument("--h", type=_positive_vector, nargs="+", default=None,
                   help="fixed bandwidth h (scalar or one per axis)")
    r.add_argument("--l", type=_positive_vector, nargs="+", default=None)
    r.add_argument("--g", type=_positive_vector, nargs="+", default=None)
    r.add_argument("--raster-resolution", type=int, default=128)
    r.add_argument("--out", required=True, help="output prefix")
    r.set_defaults(func=cmd_region)

    k = sub.add_parser("kde-eval", help="evaluate the density estimate at points")
    k.add_argument("--data", required=True)
    k.add_argument("--h", type=_positive_vector, nargs="+", required=True)
    k.add_argument("--bc", action="store_true", help="bias-corrected estimator")
    k.add_argument("--l", type=_positive_vector, nargs="+", default=None)
    k.add_argument("--points", required=True)
    k.add_argument("--kernel", default="sim2d")
    k.add_argument("--out", default=None, help="output CSV (default stdout)")
    k.set_defaults(func=cmd_kde_eval)

    c = sub.add_parser("constants", help="kernel constants")
    c.add_argument("--kernel", default="sim2d")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_constants)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BandwidthTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, ArithmeticError, BootstrapFailure, ExperimentFailure,
            NonFiniteFieldError, np.linalg.LinAlgError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
