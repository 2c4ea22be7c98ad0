"""Bootstrap calibration of confidence-region widths.

Every replication draws a resample, refits the estimator and reduces it to
one or more scalar statistics; the region width is an upper order statistic
of those values.  Randomness for replication ``b`` comes only from
``(base_seed, b)``, so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .density import Bandwidths, DensityEstimator, as_dataset, sample_smoothed, sample_standard
from .flow import FlowOptions, SurrogateStack, trace_batch
from .geometry import Contour, GridSpec, directed_hausdorff, extract_contour, hausdorff, resample
from .kernel import KernelSpec

__all__ = [
    "STATISTICS",
    "BootstrapPlan",
    "QuantileEstimate",
    "BootstrapFailure",
    "order_statistic_index",
    "order_statistic",
    "replication_rng",
    "run_replications",
    "sup_abs_diff_on_contour",
    "curve_displacement",
    "curve_displacement_stacked",
    "projection_displacement",
    "smoothed_bootstrap",
    "quantile_vertical",
    "quantile_curve_displacement",
    "quantile_projection_displacement",
    "quantile_hausdorff_std",
    "write_samples_csv",
]

STATISTICS = (
    "sup_vs_fg",
    "sup_vs_mean_E",
    "curve_displacement_E",
    "projection_displacement_E",
    "hausdorff_std",
)

# Largest tolerated fraction of skipped replications.
MAX_SKIP_FRACTION = 0.2
#: replications whose curve-displacement flows are integrated together
STACK_CHUNK = 25


class BootstrapFailure(RuntimeError):
    """Too many replications could not produce a statistic."""


class UndefinedTarget(ValueError):
    """The contour a statistic is measured from does not exist."""


class ReplicationSkipped(Exception):
    """Raised inside a replication when its statistic is undefined."""


@dataclass(frozen=True)
class BootstrapPlan:
    """Replication count, statistic, resampling scheme and seed."""

    B: int
    statistic: str
    alpha: float = 0.1
    resampling: str = "smoothed"
    base_seed: int = 0

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")
        if self.resampling not in ("smoothed", "standard"):
            raise ValueError("resampling must be 'smoothed' or 'standard'")
        validate_replications(self.B, self.alpha)


def validate_replications(B: int, alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if B < 20:
        raise ValueError("at least 20 bootstrap replications are required")
    if alpha * B < 1 - 1e-9:
        raise ValueError(f"B={B} is too small for alpha={alpha}: need alpha * B >= 1")


def order_statistic_index(B: int, alpha: float) -> int:
    """1-based index ``ceil((1 - alpha) B)``, robust to rounding in ``(1 - alpha) B``."""
    return max(1, min(B, math.ceil((1.0 - alpha) * B - 1e-9)))


def order_statistic(samples, alpha: float) -> float:
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size == 0:
        raise BootstrapFailure("no bootstrap statistics to take a quantile of")
    return float(s[order_statistic_index(s.size, alpha) - 1])


@dataclass
class QuantileEstimate:
    """An order-statistic quantile together with the sample it came from.

    ``failure_count`` counts replications in which some integral curve did
    not reach the level (fallback points were used); ``skipped`` counts
    replications that produced no statistic at all.
    """

    value: float
    alpha: float
    B: int
    statistic: str
    samples: np.ndarray
    failure_count: int = 0
    skipped: int = 0
    status: np.ndarray | None = field(default=None, repr=False)

    def at(self, alpha: float) -> float:
        """Quantile of the same stored sample at another level."""
        return order_statistic(self.samples, alpha)


def replication_rng(base_seed: int, b: int) -> np.random.Generator:
    """Independent generator for replication ``b``."""
    return np.random.default_rng(np.random.SeedSequence(int(base_seed), spawn_key=(int(b),)))


Replicate = Callable[[np.random.Generator], tuple[dict, dict]]


def run_replications(replicate: Replicate, B: int, base_seed: int, workers: int = 1,
                     indices: Sequence[int] | None = None) -> list:
    """Run ``replicate(rng)`` for ``b = 0..B-1`` (or the given ``indices``).

    ``replicate`` returns ``(values, flagged)`` dicts keyed by statistic, or
    raises :class:`ReplicationSkipped`.  Results come back in index order,
    with ``None`` for skipped replications.
    """
    idx = range(B) if indices is None else list(indices)

    def one(b):
        try:
            return replicate(replication_rng(base_seed, b))
        except ReplicationSkipped:
            return None

    if workers <= 1:
        return [one(b) for b in idx]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(one, idx))


def _collect(results: list, statistic: str, alpha: float) -> QuantileEstimate:
    B = len(results)
    vals = np.full(B, np.nan)
    status = np.array(["skipped"] * B, dtype=object)
    flagged = 0
    for b, r in enumerate(results):
        if r is None:
            continue
        values, flags = r
        vals[b] = values.get(statistic, math.nan)
        if math.isnan(vals[b]):
            continue
        bad = bool(flags.get(statistic, False))
        flagged += bad
        status[b] = "flow_failure" if bad else "ok"
    kept = vals[~np.isnan(vals)]
    skipped = B - kept.size
    if skipped > MAX_SKIP_FRACTION * B:
        raise BootstrapFailure(f"{skipped} of {B} replications failed for {statistic}")
    return QuantileEstimate(value=order_statistic(kept, alpha), alpha=alpha, B=B,
                            statistic=statistic, samples=vals, failure_count=flagged,
                            skipped=skipped, status=status)


# --------------------------------------------------------------------------- #
# statistics

def sup_abs_diff_on_contour(fa, fb, ct: Contour) -> float:
    """``max |fa - fb|`` over the contour's vertices.

    ``fb`` may be a callable or precomputed values at the vertices.
    """
    if ct.empty:
        raise ValueError("statistic over an empty contour")
    v = ct.vertices()
    a = np.asarray(fa(v) if callable(fa) else fa, dtype=float)
    b = np.asarray(fb(v) if callable(fb) else fb, dtype=float)
    return float(np.max(np.abs(a - b)))


def curve_displacement(field_star, seeds: np.ndarray, c: float,
                       opts: FlowOptions = FlowOptions()) -> tuple[float, int]:
    """Largest ``|X(theta) - x|`` over seeds, flowing under ``field_star`` to ``c``.

    Seeds whose curve does not reach the level contribute their fallback
    point; the second return value counts them.
    """
    if len(seeds) == 0:
        raise ValueError("no seeds")
    batch = trace_batch(field_star, seeds, c, opts)
    disp = np.linalg.norm(batch.endpoint - seeds, axis=1)
    return float(disp.max()), batch.failures


def curve_displacement_stacked(fields: Sequence, seeds: np.ndarray, c: float, grid: GridSpec,
                               opts: FlowOptions = FlowOptions()) -> list[tuple[float, int]]:
    """:func:`curve_displacement` for several fields in one vectorized pass,
    each field replaced by its bicubic surrogate on ``grid``."""
    if len(seeds) == 0:
        raise ValueError("no seeds")
    stack = SurrogateStack(fields, grid)
    batch = trace_batch(stack, stack.lift(seeds), c, opts)
    m = len(seeds)
    disp = np.linalg.norm(batch.endpoint[:, :2] - np.tile(seeds, (stack.count, 1)), axis=1)
    bad = batch.status != 0
    return [(float(disp[k * m:(k + 1) * m].max()), int(bad[k * m:(k + 1) * m].sum()))
            for k in range(stack.count)]


def projection_displacement(seeds: Contour, target: Contour) -> float:
    """Largest distance from a vertex of ``seeds`` to the ``target`` contour."""
    return directed_hausdorff(seeds, target)


# --------------------------------------------------------------------------- #
# engines
#
# Contours of bootstrap estimates are interpolated linearly along grid edges
# without root polishing: the interpolation error (second order in the grid
# spacing) is far below the displacement scale being calibrated.

def _vertex_spacing(h) -> float:
    return float(np.min(h)) / 4.0


def smoothed_bootstrap(dataset, kernel: KernelSpec, bw: Bandwidths, c: float, grid: GridSpec,
                       statistics: Sequence[str], B: int, alpha: float, base_seed: int,
                       contour: Contour | None = None, workers: int = 1,
                       flow_opts: FlowOptions = FlowOptions(),
                       flow_grid: GridSpec | None = None,
                       strict: bool = True) -> dict[str, QuantileEstimate]:
    """Several smoothed-bootstrap statistics computed from shared resamples.

    ``contour`` is the estimated contour (from ``f_h``) used by the
    vertical statistics.  Horizontal statistics use the contour of the
    bootstrap mean ``f_g * K_h``.  With ``flow_grid`` the integral curves
    of each bootstrap estimate run on its bicubic surrogate over that grid,
    ``STACK_CHUNK`` replications at a time.

    With ``strict=False`` a statistic that cannot be formed (its reference
    contour is empty, or too many replications fail) maps to the exception
    instead of raising, so the remaining statistics are still returned.
    """
    validate_replications(B, alpha)
    ds = as_dataset(dataset)
    unknown = set(statistics) - set(STATISTICS[:4])
    if unknown:
        raise ValueError(f"not smoothed-bootstrap statistics: {sorted(unknown)}")
    need_vertical = {"sup_vs_fg", "sup_vs_mean_E"} & set(statistics)
    need_mean_ct = {"curve_displacement_E", "projection_displacement_E"} & set(statistics)
    spacing = _vertex_spacing(bw.h)
    mean = DensityEstimator(ds, kernel, bw.h, "bootstrap_mean", bw.g)

    if need_vertical:
        f_h = DensityEstimator(ds, kernel, bw.h)
        ct = contour if contour is not None else extract_contour(f_h, grid, c)
        if ct.empty:
            raise ValueError("the estimate has no crossing of the level on the grid")
        verts = resample(ct, spacing).vertices()
        f_g = DensityEstimator(ds, kernel, bw.g)
        ref = {"sup_vs_fg": f_g(verts), "sup_vs_mean_E": mean(verts)}
    undefined = {}
    if need_mean_ct:
        mean_ct = extract_contour(mean, grid, c)
        if mean_ct.empty:
            err = UndefinedTarget("the bootstrap mean has no crossing of the level on the grid")
            if strict:
                raise err
            undefined = {s: err for s in need_mean_ct}
            statistics = [s for s in statistics if s not in undefined]
            need_mean_ct = set()
        else:
            mean_ct = resample(mean_ct, spacing)
            seeds = mean_ct.vertices()

    def replicate(rng):
        star = DensityEstimator(sample_smoothed(ds, kernel, bw.g, ds.n, rng), kernel, bw.h)
        values, flags = {}, {}
        if need_vertical:
            fv = star(verts)
            for s in need_vertical:
                values[s] = float(np.max(np.abs(fv - ref[s])))
        if "curve_displacement_E" in statistics:
            if stacked:
                values["_star"] = star
            else:
                val, failed = curve_displacement(star, seeds, c, flow_opts)
                values["curve_displacement_E"] = val
                flags["curve_displacement_E"] = failed > 0
        if "projection_displacement_E" in statistics:
            # A resample without a level crossing has no displacement to report.
            star_ct = extract_contour(star, grid, c, refine=False)
            values["projection_displacement_E"] = (
                math.nan if star_ct.empty else projection_displacement(mean_ct, star_ct))
        return values, flags

    def collect_all(results):
        out = dict(undefined)
        for s in statistics:
            try:
                out[s] = _collect(results, s, alpha)
            except BootstrapFailure as exc:
                if strict:
                    raise
                out[s] = exc
        return out

    if not statistics:
        return dict(undefined)
    stacked = flow_grid is not None and "curve_displacement_E" in statistics
    if not stacked:
        return collect_all(run_replications(replicate, B, base_seed, workers))
    results = []
    for start in range(0, B, STACK_CHUNK):
        part = run_replications(replicate, B, base_seed, workers,
                                indices=range(start, min(B, start + STACK_CHUNK)))
        live = [r for r in part if r is not None]
        if live:
            disp = curve_displacement_stacked([r[0].pop("_star") for r in live], seeds, c,
                                              flow_grid, flow_opts)
            for (values, flags), (val, failed) in zip(live, disp):
                values["curve_displacement_E"] = val
                flags["curve_displacement_E"] = failed > 0
        results.extend(part)
    return collect_all(results)


def quantile_vertical(dataset, kernel: KernelSpec, bw: Bandwidths, ct: Contour,
                      plan: BootstrapPlan, grid: GridSpec | None = None,
                      workers: int = 1) -> QuantileEstimate:
    """Vertical-width quantile: ``sup |f* - f_g|`` or ``sup |f* - E* f*|`` on ``ct``."""
    if plan.statistic not in ("sup_vs_fg", "sup_vs_mean_E"):
        raise ValueError("quantile_vertical needs a sup statistic")
    if ct.empty:
        raise ValueError("empty contour")
    ds = as_dataset(dataset)
    if plan.resampling == "standard":
        verts = resample(ct, _vertex_spacing(bw.h)).vertices()
        centre = DensityEstimator(ds, kernel, bw.h)(verts)

        def replicate(rng):
            star = DensityEstimator(sample_standard(ds, ds.n, rng), kernel, bw.h)
            return {plan.statistic: float(np.max(np.abs(star(verts) - centre)))}, {}

        validate_replications(plan.B, plan.alpha)
        return _collect(run_replications(replicate, plan.B, plan.base_seed, workers),
                        plan.statistic, plan.alpha)
    grid = grid or GridSpec.around(ds.points, np.max(bw.h) + np.max(bw.g), 64)
    return smoothed_bootstrap(ds, kernel, bw, ct.level, grid, [plan.statistic], plan.B,
                              plan.alpha, plan.base_seed, contour=ct, workers=workers)[plan.statistic]


def quantile_curve_displacement(dataset, kernel: KernelSpec, bw: Bandwidths, plan: BootstrapPlan,
                                c: float, grid: GridSpec, workers: int = 1,
                                flow_opts: FlowOptions = FlowOptions(),
                                flow_grid: GridSpec | None = None) -> QuantileEstimate:
    """Quantile of the largest integral-curve displacement from the bootstrap-mean contour."""
    if plan.resampling != "smoothed":
        raise ValueError("curve displacement uses the smoothed bootstrap")
    return smoothed_bootstrap(dataset, kernel, bw, c, grid, ["curve_displacement_E"], plan.B,
                              plan.alpha, plan.base_seed, workers=workers,
                              flow_opts=flow_opts, flow_grid=flow_grid)["curve_displacement_E"]


def quantile_projection_displacement(dataset, kernel: KernelSpec, bw: Bandwidths, plan: BootstrapPlan,
                                     c: float, grid: GridSpec, workers: int = 1) -> QuantileEstimate:
    """Quantile of the largest nearest-point displacement between the
    bootstrap-mean contour and the bootstrap contour."""
    if plan.resampling != "smoothed":
        raise ValueError("projection displacement uses the smoothed bootstrap")
    return smoothed_bootstrap(dataset, kernel, bw, c, grid, ["projection_displacement_E"], plan.B,
                              plan.alpha, plan.base_seed, workers=workers)["projection_displacement_E"]


def quantile_hausdorff_std(dataset, kernel: KernelSpec, h, ct: Contour, plan: BootstrapPlan,
                           grid: GridSpec, workers: int = 1) -> QuantileEstimate:
    """Quantile of ``d_H(M*, M)`` under the multinomial bootstrap."""
    if plan.statistic != "hausdorff_std":
        raise ValueError("plan statistic must be hausdorff_std")
    if ct.empty:
        raise ValueError("empty contour")
    ds = as_dataset(dataset)
    c = ct.level

    def replicate(rng):
        star = DensityEstimator(sample_standard(ds, ds.n, rng), kernel, h)
        star_ct = extract_contour(star, grid, c, refine=False)
        if star_ct.empty:
            raise ReplicationSkipped
        return {"hausdorff_std": hausdorff(star_ct, ct)}, {}

    return _collect(run_replications(replicate, plan.B, plan.base_seed, workers),
                    "hausdorff_std", plan.alpha)


def write_samples_csv(estimates: dict[str, QuantileEstimate], path) -> None:
    """Dump ``(statistic, replication, value, status)`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "replication", "value", "status"])
        for name, est in estimates.items():
            status = est.status if est.status is not None else ["ok"] * len(est.samples)
            for b, (v, s) in enumerate(zip(est.samples, status)):
                w.writerow([name, b, "" if np.isnan(v) else repr(float(v)), s])
