"""Monte-Carlo coverage experiments for the confidence-region methods.

One run draws a sample from a preset model, selects bandwidths, builds the
requested regions and checks them against the method's target contour
(the true one, or the contour of ``f * K_h`` for methods that target the
smoothed density).  Runs are independent and seeded by ``(seed, run)``.
"""

from __future__ import annotations

import csv
import math
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import gamma

from .bootstrap import (
    BootstrapFailure,
    BootstrapPlan,
    QuantileEstimate,
    quantile_hausdorff_std,
    UndefinedTarget,
    smoothed_bootstrap,
    validate_replications,
)
from .density import Bandwidths, DensityEstimator, as_dataset
from .evt import BandwidthTooLargeError, build_cn1
from .flow import FlowOptions, GridSurrogate
from .geometry import Contour, GridSpec, contour_svg, extract_contour
from .kernel import KernelSpec, constants, get_kernel, profile_integral
from .models import get_preset
from .regions import (
    GradientTubeRegion,
    Region,
    TubeRegion,
    VerticalRegion,
    covers_isosurface,
    mask_boundary,
    measure,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "METHODS",
    "METHOD_TARGET",
    "ExperimentConfig",
    "CoverageReport",
    "MethodSummary",
    "RunResult",
    "BuiltRegion",
    "confidence_region",
    "config_from_dict",
    "ConfigError",
    "ExperimentFailure",
    "normal_scale_constants",
    "select_bandwidths",
    "load_config",
    "run_one",
    "run_case",
    "emit_report",
    "read_report",
]

METHODS = ("H", "V.e", "V", "V.bc", "V.us", "V.ls", "C4", "C4*", "C5*", "C6*")

# Which contour each method is meant to cover.
METHOD_TARGET = {
    "H": "smoothed", "V.e": "smoothed",
    "V": "true", "V.bc": "true", "V.us": "true", "V.ls": "true",
    "C4": "true", "C4*": "true", "C5*": "true", "C6*": "true",
}

# Largest tolerated fraction of aborted runs.
MAX_ABORT_FRACTION = 0.1
#: RK4 step (fraction of the level gap) for simulation flows; the Newton
#: polish at the end absorbs the coarser integration error
HARNESS_STEP_FRAC = 1.0 / 16

REPORT_COLUMNS = ["method", "case", "n", "M", "B", "alpha", "coverage", "mean_volume",
                  "mean_mass", "failures"]


# --------------------------------------------------------------------------- #
# bandwidths

@lru_cache(maxsize=None)
def normal_scale_constants(kernel: KernelSpec) -> tuple[float, float]:
    """``(C0, C2)`` with ``h = sigma C0 n^(-1/(d+4))`` and ``l = sigma C2 n^(-1/(d+8))``.

    Both minimize the asymptotic integrated squared error when the data are
    standard normal: ``C0`` for the density itself, ``C2`` for its Laplacian,
    which is what the bias correction estimates.
    """
    d = kernel.dimension
    kc = constants(kernel)
    k = kernel.profile
    r0 = profile_integral(kernel, lambda u: float(k(u)) ** 2)
    r1 = profile_integral(kernel, lambda u: float(k(u, 1)) ** 2)
    r2 = profile_integral(kernel, lambda u: float(k(u, 2)) ** 2)
    r_lap_k = d * r2 * r0 ** (d - 1) + d * (d - 1) * r1**2 * r0 ** max(d - 2, 0)

    def r_lap_phi(m):
        # int (Laplacian^m of the standard normal density)^2
        return gamma(d / 2 + 2 * m) / (2**d * math.pi ** (d / 2) * gamma(d / 2))

    c0 = (d * kc.l2_norm_sq / (kc.mu2**2 * r_lap_phi(1))) ** (1 / (d + 4))
    c2 = ((d + 4) * r_lap_k / (kc.mu2**2 * r_lap_phi(2))) ** (1 / (d + 8))
    return float(c0), float(c2)


def select_bandwidths(dataset, kernel: KernelSpec, rule="normal_scale") -> Bandwidths:
    """Bandwidths by the normal-scale rule, or fixed ``{"h":..., "l":..., "g":...}``.

    Under the normal-scale rule ``g = h`` and each axis is scaled by its
    sample standard deviation.
    """
    ds = as_dataset(dataset)
    if isinstance(rule, dict):
        def axis(v):
            return np.broadcast_to(np.asarray(v, dtype=float), (ds.d,)).copy()
        h = axis(rule["h"])
        return Bandwidths(h=h, l=axis(rule.get("l", h)), g=axis(rule.get("g", h)))
    if rule != "normal_scale":
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    sd = ds.points.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError("an axis has zero sample variance")
    c0, c2 = normal_scale_constants(kernel)
    n, d = ds.n, ds.d
    h = sd * c0 * n ** (-1 / (d + 4))
    return Bandwidths(h=h, l=sd * c2 * n ** (-1 / (d + 8)), g=h)


# --------------------------------------------------------------------------- #
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one coverage experiment (see ``load_config`` for the file form)."""

    case: str = "case1"
    n: int = 200
    runs: int = 10
    B: int = 250
    alpha: float = 0.1
    methods: tuple[str, ...] = ("H", "V.e", "V", "V.bc", "V.us")
    bandwidth_rule: object = "normal_scale"
    undersmooth_factor: float = 0.7
    seed: int = 0
    kernel: str = "sim2d"
    contour_resolution: int = 128
    volume_resolution: int = 512
    flow_volume_resolution: int = 256
    surrogate_resolution: int = 256
    bootstrap_surrogate_resolution: int = 128
    n_probe: int = 1024
    flow: FlowOptions = field(default_factory=lambda: FlowOptions(step_frac=HARNESS_STEP_FRAC))

    def __post_init__(self):
        get_preset(self.case)
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        validate_replications(self.B, self.alpha)
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        if not 0 < self.undersmooth_factor <= 1:
            raise ValueError("undersmooth_factor must lie in (0, 1]")
        if isinstance(self.bandwidth_rule, dict):
            if "h" not in self.bandwidth_rule:
                raise ValueError("a fixed bandwidth rule needs h")
        elif self.bandwidth_rule != "normal_scale":
            raise ValueError("bandwidth_rule must be 'normal_scale' or a table with h, l, g")
        object.__setattr__(self, "methods", tuple(self.methods))


_TOP_KEYS = {f for f in ExperimentConfig.__dataclass_fields__} - {"flow"}


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment file.

    Keys mirror :class:`ExperimentConfig`; ``bandwidth_rule`` is either the
    string ``"normal_scale"`` or a table ``{h = .., l = .., g = ..}``, and an
    optional ``[flow]`` table sets :class:`FlowOptions`.
    """
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)


class ConfigError(ValueError):
    """An experiment configuration that is malformed or inconsistent."""


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated :class:`ExperimentConfig` from plain key-value data."""
    raw = dict(raw)
    flow = dict(raw.pop("flow", {}))
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "methods" in raw:
        raw["methods"] = tuple(raw["methods"])
    flow.setdefault("step_frac", HARNESS_STEP_FRAC)
    try:
        return ExperimentConfig(**raw, flow=FlowOptions(**flow))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------- #
# one run

@dataclass
class RunResult:
    """Per-method outcome of one Monte-Carlo run."""

    run: int
    covered: dict[str, bool] = field(default_factory=dict)
    volume: dict[str, float] = field(default_factory=dict)
    mass: dict[str, float] = field(default_factory=dict)
    quantile: dict[str, float] = field(default_factory=dict)
    flow_failures: dict[str, int] = field(default_factory=dict)
    boundary: dict[str, bool] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    #: methods whose quantile could not be formed in this run, with the reason
    failed: dict[str, str] = field(default_factory=dict)
    error: str | None = None
    h: tuple[float, ...] = ()
    #: region outlines per method, kept only when overlays are requested
    overlay: dict[str, Contour] | None = field(default=None, repr=False)
    svg: str | None = field(default=None, repr=False)


def _seed_int(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def _family_seed(seed: int, run: int, family: int) -> int:
    return _seed_int(seed, run, family)


class _Run:
    """Lazily built per-run objects shared by several methods."""

    def __init__(self, cfg: ExperimentConfig, run: int, data: np.ndarray | None = None,
                 level: float | None = None):
        self.cfg = cfg
        self.run = run
        self.preset = get_preset(cfg.case)
        self.kernel = get_kernel(cfg.kernel)
        self.c = self.preset.level if level is None else float(level)
        if data is None:
            rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(int(run),)))
            data = self.preset.model.sample(cfg.n, rng)
        self.data = as_dataset(data)
        self.bw = select_bandwidths(self.data, self.kernel, cfg.bandwidth_rule)
        pad = float(np.max(self.bw.h) + np.max(self.bw.g))
        self.grid = GridSpec.around(self.data.points, pad, cfg.contour_resolution)
        self.vgrid = GridSpec(self.grid.lower, self.grid.upper, cfg.volume_resolution)
        self.fgrid = GridSpec(self.grid.lower, self.grid.upper, cfg.flow_volume_resolution)
        self.sgrid = GridSpec(self.grid.lower, self.grid.upper, cfg.surrogate_resolution)
        self.bgrid = GridSpec(self.grid.lower, self.grid.upper, cfg.bootstrap_surrogate_resolution)
        self._cache: dict = {}

    def get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    # estimators and contours
    @property
    def f_hat(self):
        return self.get("f", lambda: DensityEstimator(self.data, self.kernel, self.bw.h))

    @property
    def f_bc(self):
        return self.get("bc", lambda: DensityEstimator(self.data, self.kernel, self.bw.h,
                                                        "bias_corrected", self.bw.l))

    @property
    def f_bc_flow(self):
        """Spline surrogate of the bias-corrected estimate for curve tracing."""
        return self.get("bc_flow", lambda: GridSurrogate(self.f_bc, self.sgrid))

    def contour(self, key, est) -> Contour:
        def build():
            ct = extract_contour(est, self.grid, self.c)
            if ct.empty:
                raise ValueError(f"estimated contour ({key}) is empty at level {self.c:g}")
            return ct
        return self.get(("ct", key), build)

    # targets
    def probes(self, target: str) -> np.ndarray:
        def build():
            model = self.preset.model
            if target == "smoothed":
                model = model.smoothed(self.kernel, self.bw.h)
            return model.true_contour(self.c, self.cfg.n_probe).vertices()
        return self.get(("probes", target), build)

    # bootstrap quantiles
    def smoothed_quantiles(self) -> dict[str, QuantileEstimate]:
        def build():
            stats = []
            ms = set(self.cfg.methods)
            if "V" in ms:
                stats.append("sup_vs_fg")
            if ms & {"V.e", "V.bc", "C4*"}:
                stats.append("sup_vs_mean_E")
            if "C5*" in ms:
                stats.append("curve_displacement_E")
            if "C6*" in ms:
                stats.append("projection_displacement_E")
            if not stats:
                return {}
            return smoothed_bootstrap(
                self.data, self.kernel, self.bw, self.c, self.grid, stats, self.cfg.B,
                self.cfg.alpha, _family_seed(self.cfg.seed, self.run, 1),
                contour=self.contour("f", self.f_hat), flow_opts=self.cfg.flow,
                flow_grid=self.bgrid, strict=False)
        return self.get("smoothed", build)


def _measure_into(res: RunResult, method: str, region: Region, run: _Run, grid: GridSpec):
    mask = region.mask(grid)
    m = measure(region, run.preset.model, grid, mask)
    res.volume[method] = m.volume
    res.mass[method] = m.mass
    res.boundary[method] = m.touches_boundary
    if res.overlay is not None:
        res.overlay[method] = mask_boundary(mask, grid)


@dataclass
class BuiltRegion:
    """A method's confidence region with the grid used to measure it."""

    method: str
    region: object
    quantile: float
    grid: GridSpec
    bootstrap_failures: int = 0


def _statistic(run: _Run, name: str) -> QuantileEstimate:
    q = run.smoothed_quantiles()[name]
    if isinstance(q, Exception):
        raise q
    return q


def _build(method: str, run: _Run) -> BuiltRegion:
    cfg, c = run.cfg, run.c
    grid = run.vgrid
    failures = 0
    if method in ("V", "V.e", "V.bc"):
        q = _statistic(run, "sup_vs_fg" if method == "V" else "sup_vs_mean_E")
        est = run.f_bc if method == "V.bc" else run.f_hat
        region = VerticalRegion(est, c - q.value, c + q.value)
    elif method == "V.us":
        bw = run.bw.scaled(cfg.undersmooth_factor, "hg")
        est = DensityEstimator(run.data, run.kernel, bw.h)
        ct = extract_contour(est, run.grid, c)
        if ct.empty:
            raise ValueError("undersmoothed contour is empty")
        q = smoothed_bootstrap(run.data, run.kernel, bw, c, run.grid, ["sup_vs_mean_E"], cfg.B,
                               cfg.alpha, _family_seed(cfg.seed, run.run, 2), contour=ct)["sup_vs_mean_E"]
        region = VerticalRegion(est, c - q.value, c + q.value)
    elif method in ("V.ls", "C4"):
        region, _, a = build_cn1(run.f_bc, run.grid, c, cfg.alpha, contour=run.contour("bc", run.f_bc))
        q = a
        if method == "C4":
            region = GradientTubeRegion(run.f_bc_flow, c, a, run.contour("bc", run.f_bc), cfg.flow)
            grid = run.fgrid
    elif method == "H":
        plan = BootstrapPlan(cfg.B, "hausdorff_std", cfg.alpha, "standard",
                             _family_seed(cfg.seed, run.run, 3))
        q = quantile_hausdorff_std(run.data, run.kernel, run.bw.h, run.contour("f", run.f_hat),
                                   plan, run.grid)
        region = TubeRegion(run.contour("f", run.f_hat), q.value)
    elif method in ("C4*", "C5*"):
        q = _statistic(run, "sup_vs_mean_E" if method == "C4*" else "curve_displacement_E")
        failures += q.failure_count
        region = GradientTubeRegion(run.f_bc_flow, c, q.value, run.contour("bc", run.f_bc), cfg.flow,
                                    weighted=method == "C4*")
        grid = run.fgrid
    elif method == "C6*":
        q = _statistic(run, "projection_displacement_E")
        region = TubeRegion(run.contour("bc", run.f_bc), q.value)
    else:  # pragma: no cover - guarded by config validation
        raise ValueError(method)
    value = q.value if isinstance(q, QuantileEstimate) else q
    return BuiltRegion(method, region, float(value), grid, failures)


def _method(res: RunResult, method: str, run: _Run):
    try:
        built = _build(method, run)
    except BandwidthTooLargeError as exc:
        res.skipped[method] = str(exc)
        return
    except (UndefinedTarget, BootstrapFailure) as exc:
        # the method has no quantile in this run; the others are unaffected
        res.failed[method] = f"{type(exc).__name__}: {exc}"
        return
    region = built.region
    res.quantile[method] = built.quantile
    res.covered[method] = covers_isosurface(region, probes=run.probes(METHOD_TARGET[method]))
    _measure_into(res, method, region, run, built.grid)
    failures = built.bootstrap_failures
    if isinstance(region, GradientTubeRegion):
        failures += region.flow_failures
    res.flow_failures[method] = failures


def confidence_region(data, c: float, method: str, alpha: float = 0.1, B: int = 250,
                      seed: int = 0, kernel: str = "sim2d", **options) -> tuple[BuiltRegion, "_Run"]:
    """Build one method's confidence region for a user sample at level ``c``.

    ``options`` are further :class:`ExperimentConfig` fields (bandwidth rule,
    grid resolutions, flow options).  Returns the region and the run context
    holding the fitted estimators, contours and grids.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    cfg = ExperimentConfig(runs=1, B=B, alpha=alpha, methods=(method,), seed=seed,
                           kernel=kernel, **options)
    run = _Run(cfg, 0, data, level=c)
    return _build(method, run), run


_OVERLAY_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b",
                   "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#aec7e8")


def _overlay_svg(run: _Run, outlines: dict[str, Contour]) -> str:
    layers = [(ct, _OVERLAY_COLORS[METHODS.index(m)]) for m, ct in outlines.items() if not ct.empty]
    truth = run.preset.model.true_contour(run.c, run.cfg.n_probe)
    layers += [(truth, "#000000"), (run.contour("f", run.f_hat), "#d62728")]
    g = run.grid
    return contour_svg(layers, (g.lower[0], g.lower[1], g.upper[0], g.upper[1]),
                       points=run.data.points)


def run_one(cfg: ExperimentConfig, run: int, data=None, overlay: bool = False) -> RunResult:
    """Execute one Monte-Carlo run; errors are captured in ``RunResult.error``.

    With ``overlay`` the result carries an SVG (``RunResult.svg``) showing the
    sample, the true contour (black), the estimated contour (red) and the
    outline of every method's region.
    """
    res = RunResult(run=run, overlay={} if overlay else None)
    try:
        r = _Run(cfg, run, data)
        res.h = tuple(float(v) for v in r.bw.h)
        for method in cfg.methods:
            _method(res, method, r)
        if overlay:
            res.svg = _overlay_svg(r, res.overlay)
    except Exception as exc:  # a failed run is reported, not fatal
        res.error = f"{type(exc).__name__}: {exc}"
        res.covered.clear()
        if _debug():
            traceback.print_exc()
    return res


def _debug() -> bool:
    import os
    return bool(os.environ.get("LEVELCONF_DEBUG"))


# --------------------------------------------------------------------------- #
# aggregation

@dataclass
class MethodSummary:
    method: str
    coverage: float
    mean_volume: float
    mean_mass: float
    failures: int
    evaluated: int
    note: str = ""


@dataclass
class CoverageReport:
    """Aggregated coverage table plus the per-run records it came from."""

    config: ExperimentConfig
    summaries: list[MethodSummary]
    runs: list[RunResult]
    wall_time: float = 0.0

    def summary(self, method: str) -> MethodSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)

    def indicators(self, method: str) -> np.ndarray:
        """Per-run coverage indicators (NaN where the method was not evaluated)."""
        return np.array([float(r.covered[method]) if method in r.covered else np.nan
                         for r in self.runs])

    def volumes(self, method: str) -> np.ndarray:
        return np.array([r.volume.get(method, np.nan) if r.error is None else np.nan
                         for r in self.runs])

    @property
    def aborted(self) -> int:
        return sum(r.error is not None for r in self.runs)


def _summarize(cfg: ExperimentConfig, runs: list[RunResult]) -> list[MethodSummary]:
    out = []
    for m in cfg.methods:
        ok = [r for r in runs if r.error is None and m in r.covered]
        skipped = [r for r in runs if m in r.skipped]
        failures = sum(1 for r in runs if r.flow_failures.get(m, 0) > 0 or m in r.failed)
        note = ""
        if skipped:
            note = f"skipped in {len(skipped)} runs: {skipped[0].skipped[m]}"
        if not ok:
            out.append(MethodSummary(m, math.nan, math.nan, math.nan, failures, 0, note))
            continue
        out.append(MethodSummary(
            method=m,
            coverage=float(np.mean([r.covered[m] for r in ok])),
            mean_volume=float(np.mean([r.volume[m] for r in ok])),
            mean_mass=float(np.mean([r.mass[m] for r in ok])),
            failures=failures,
            evaluated=len(ok),
            note=note,
        ))
    return out


class ExperimentFailure(RuntimeError):
    """Too many runs aborted."""


def run_case(cfg: ExperimentConfig, workers: int = 1, runs: Sequence[int] | None = None,
             overlay: bool = False) -> CoverageReport:
    """Run the experiment; results are identical for any ``workers``."""
    t0 = time.perf_counter()
    idx = list(range(cfg.runs)) if runs is None else list(runs)
    if workers <= 1:
        results = [run_one(cfg, i, overlay=overlay) for i in idx]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run_one, [cfg] * len(idx), idx, [None] * len(idx),
                                  [overlay] * len(idx)))
    results.sort(key=lambda r: r.run)
    aborted = sum(r.error is not None for r in results)
    if aborted > MAX_ABORT_FRACTION * len(results):
        first = next(r.error for r in results if r.error is not None)
        raise ExperimentFailure(f"{aborted} of {len(results)} runs aborted; first error: {first}")
    return CoverageReport(cfg, _summarize(cfg, results), results, time.perf_counter() - t0)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else format(x, ".17g")
    return str(x)


def emit_report(report: CoverageReport, path) -> None:
    """Write one CSV row per method with a fixed column order."""
    cfg = report.config
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for s in report.summaries:
            w.writerow([s.method, cfg.case, cfg.n, cfg.runs, cfg.B, _fmt(float(cfg.alpha)),
                        _fmt(s.coverage), _fmt(s.mean_volume), _fmt(s.mean_mass), s.failures])


def read_report(path) -> list[dict]:
    """Parse a report CSV back into typed rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    conv = {"n": int, "M": int, "B": int, "failures": int, "alpha": float, "coverage": float,
            "mean_volume": float, "mean_mass": float}
    return [{k: conv.get(k, str)(v) for k, v in r.items()} for r in rows]
