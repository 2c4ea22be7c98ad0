"""Confidence-region representations and their measurement on grids.

A region is anything with a vectorized ``contains(points)``; grid rasters go
through ``mask(grid)``, which regions override when a faster separable path
exists.  Volumes and masses use the cell-center rule: a cell counts fully if
its center is contained.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .flow import FlowOptions, trace_batch
from .geometry import Contour, GridSpec, contour_svg, dist_to_contour, extract_contour

__all__ = [
    "DENSITY_FLOOR",
    "Region",
    "VerticalRegion",
    "TubeRegion",
    "GradientTubeRegion",
    "SuperlevelRegion",
    "UnionRegion",
    "DifferenceRegion",
    "EmptyRegion",
    "EverywhereRegion",
    "RegionPair",
    "vertical_pair",
    "horizontal_pair",
    "lebesgue_volume",
    "probability_mass",
    "measure",
    "RegionMeasure",
    "covers_isosurface",
    "covers_levelset_pair",
    "write_raster_csv",
    "region_svg",
    "mask_boundary",
]

# Lower density bound for vertical regions; keeps the outer region from
# spreading over the whole zero-density plane.
DENSITY_FLOOR = 1e-6

# Cap on the max/min gradient-norm ratio used to prefilter gradient tubes.
_RGRAD_CAP = 10.0
# Safety factor on the distance prefilter of gradient tubes (covers contour
# discretization and the sampled gradient minimum).
_REACH_SLACK = 1.5


def _as_points(x, d: int = 2) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, d)


class Region:
    """Base class; subclasses implement ``contains``."""

    def contains(self, x) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def mask(self, grid: GridSpec) -> np.ndarray:
        """Membership of every cell center, shaped like ``grid.resolution``."""
        return self.contains(grid.center_points()).reshape(grid.resolution)

    def __contains__(self, x) -> bool:
        return bool(self.contains(x)[0])


@dataclass(eq=False)
class VerticalRegion(Region):
    """``{x : max(lo, floor) <= f(x) <= hi}`` for a fitted estimator ``f``."""

    estimator: object
    lo: float
    hi: float
    floor: float = DENSITY_FLOOR

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("vertical region needs lo <= hi")

    @property
    def effective_lo(self) -> float:
        return max(self.lo, self.floor)

    def _test(self, v):
        return (v >= self.effective_lo) & (v <= self.hi)

    def contains(self, x) -> np.ndarray:
        return self._test(np.atleast_1d(self.estimator(_as_points(x, self.estimator.d))))

    def mask(self, grid):
        return self._test(self.estimator.on_grid(grid.centers()))


@dataclass(eq=False)
class SuperlevelRegion(Region):
    """``{x : f(x) >= c}``."""

    estimator: object
    c: float

    def contains(self, x) -> np.ndarray:
        return np.atleast_1d(self.estimator(_as_points(x, self.estimator.d))) >= self.c

    def mask(self, grid):
        return self.estimator.on_grid(grid.centers()) >= self.c


@dataclass(eq=False)
class TubeRegion(Region):
    """Points within ``radius`` of a contour (exact point-to-segment distance)."""

    contour: Contour
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("tube radius must be non-negative")
        if self.contour.empty:
            raise ValueError("tube around an empty contour")

    @property
    def _tree(self):
        # Vertex tree brackets the polyline distance:
        # d_vertex - half_longest_segment <= d_polyline <= d_vertex.
        if not hasattr(self, "_cached_tree"):
            A, B = self.contour.segments()
            self._cached_tree = cKDTree(self.contour.vertices())
            self._half_seg = 0.5 * float(np.linalg.norm(B - A, axis=1).max()) if len(A) else 0.0
        return self._cached_tree

    def contains(self, x) -> np.ndarray:
        pts = _as_points(x, self.contour.dim)
        if self.contour.dim == 1:
            return dist_to_contour(pts, self.contour) <= self.radius
        dv, _ = self._tree.query(pts)
        inside = dv <= self.radius
        unsure = ~inside & (dv - self._half_seg <= self.radius)
        if unsure.any():
            inside[unsure] = dist_to_contour(pts[unsure], self.contour) <= self.radius
        return inside


@dataclass(eq=False)
class GradientTubeRegion(Region):
    """Tube built from integral curves of the scaled gradient of ``estimator``.

    A query point ``x`` is traced to the level ``c``; with hitting point
    ``z`` it is contained iff ``|grad f(z)| |z - x| <= q`` (``weighted``) or
    ``|z - x| <= q`` (unweighted).  Queries whose curve does not reach the
    level are excluded and counted in ``flow_failures``.
    """

    estimator: object
    c: float
    q: float
    contour: Contour
    flow_opts: FlowOptions = field(default_factory=FlowOptions)
    weighted: bool = True
    flow_failures: int = 0

    def __post_init__(self):
        if not self.q >= 0:
            raise ValueError("tube half-width must be non-negative")
        if self.contour.empty:
            raise ValueError("gradient tube needs a non-empty estimated contour")
        g = np.linalg.norm(self.estimator.grad(self.contour.vertices()), axis=1)
        self.grad_max = float(g.max())
        gmin = self.grad_min = float(g.min())
        ratio = self.grad_max / gmin if gmin > 0 else math.inf
        self.rgrad_capped = ratio > _RGRAD_CAP
        self.rgrad = min(ratio, _RGRAD_CAP)

    def _band(self) -> float:
        # Bound on |f(x) - c| for points that can satisfy the criterion.
        if self.weighted:
            return self.q * self.rgrad
        return 2.0 * self.q * self.grad_max

    def _reach(self) -> float:
        # Bound on dist(x, contour): the hitting point lies on the contour.
        if self.weighted:
            return _REACH_SLACK * self.q / self.grad_min if self.grad_min > 0 else math.inf
        return _REACH_SLACK * self.q

    def _decide(self, pts: np.ndarray, vals: np.ndarray) -> np.ndarray:
        out = np.zeros(len(pts), dtype=bool)
        cand = np.flatnonzero(np.abs(vals - self.c) <= self._band())
        reach = self._reach()
        if cand.size and math.isfinite(reach):
            cand = cand[TubeRegion(self.contour, reach).contains(pts[cand])]
        if cand.size == 0:
            return out
        batch = trace_batch(self.estimator, pts[cand], self.c, self.flow_opts)
        hit = batch.hit
        self.flow_failures += int(np.count_nonzero(~hit))
        gap = np.linalg.norm(batch.endpoint - pts[cand], axis=1)
        if self.weighted:
            gz = np.linalg.norm(self.estimator.grad(batch.endpoint), axis=1)
            gap = gz * gap
        out[cand] = hit & (gap <= self.q)
        return out

    def contains(self, x) -> np.ndarray:
        pts = _as_points(x, self.estimator.d)
        return self._decide(pts, np.atleast_1d(self.estimator(pts)))

    def mask(self, grid):
        vals = self.estimator.on_grid(grid.centers()).ravel()
        return self._decide(grid.center_points(), vals).reshape(grid.resolution)


@dataclass(eq=False)
class UnionRegion(Region):
    a: Region
    b: Region

    def contains(self, x):
        return self.a.contains(x) | self.b.contains(x)

    def mask(self, grid):
        return self.a.mask(grid) | self.b.mask(grid)


@dataclass(eq=False)
class DifferenceRegion(Region):
    """Points of ``a`` that are not in ``b``."""

    a: Region
    b: Region

    def contains(self, x):
        return self.a.contains(x) & ~self.b.contains(x)

    def mask(self, grid):
        return self.a.mask(grid) & ~self.b.mask(grid)


class EmptyRegion(Region):
    def contains(self, x):
        return np.zeros(len(_as_points(x)), dtype=bool)


class EverywhereRegion(Region):
    def contains(self, x):
        return np.ones(len(_as_points(x)), dtype=bool)


@dataclass(eq=False)
class RegionPair:
    """Inner/outer bounds for a superlevel set: ``inner`` within L within ``outer``."""

    outer: Region
    inner: Region
    target: str = "true_set"

    def __post_init__(self):
        if self.target not in ("true_set", "smoothed_set"):
            raise ValueError("target must be 'true_set' or 'smoothed_set'")


def vertical_pair(estimator, c: float, q: float, target: str = "true_set",
                  floor: float = DENSITY_FLOOR) -> RegionPair:
    """``{f >= max(c - q, floor)}`` and ``{f >= c + q}``."""
    outer = SuperlevelRegion(estimator, max(c - q, floor))
    inner = SuperlevelRegion(estimator, c + q)
    return RegionPair(outer, inner, target)


def horizontal_pair(superlevel: Region, tube: Region, target: str = "true_set") -> RegionPair:
    """Union and difference of an estimated superlevel set with a tube."""
    return RegionPair(UnionRegion(superlevel, tube), DifferenceRegion(superlevel, tube), target)


# --------------------------------------------------------------------------- #
# measurement

@dataclass(frozen=True)
class RegionMeasure:
    volume: float
    mass: float
    touches_boundary: bool


def _touches_boundary(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())


def lebesgue_volume(r: Region, grid: GridSpec, mask: np.ndarray | None = None) -> float:
    """Cell-center volume estimate; a lower bound if the region reaches the grid edge."""
    m = r.mask(grid) if mask is None else mask
    return float(np.count_nonzero(m)) * grid.cell_volume


def probability_mass(r: Region, model, grid: GridSpec, mask: np.ndarray | None = None) -> float:
    """``sum pdf(center) * cell_area`` over contained cells."""
    m = r.mask(grid) if mask is None else mask
    dens = model.on_grid(grid.centers())
    return float(np.sum(dens[m])) * grid.cell_volume


def measure(r: Region, model, grid: GridSpec, mask: np.ndarray | None = None) -> RegionMeasure:
    """Volume, mass and boundary flag from a single rasterization."""
    m = r.mask(grid) if mask is None else mask
    return RegionMeasure(
        volume=lebesgue_volume(r, grid, m),
        mass=probability_mass(r, model, grid, m) if model is not None else math.nan,
        touches_boundary=_touches_boundary(m),
    )


def covers_isosurface(r: Region, model=None, c: float | None = None, n_probe: int = 1024,
                      probes=None) -> bool:
    """Whether every probe on the target contour lies in ``r``.

    Probes default to ``model.true_contour(c, n_probe)``; pass ``probes``
    (an array or a :class:`Contour`) to reuse them across regions.
    """
    if probes is None:
        probes = model.true_contour(c, n_probe)
    if isinstance(probes, Contour):
        probes = probes.vertices()
    return bool(np.all(r.contains(probes)))


def covers_levelset_pair(pair: RegionPair, model, c: float, grid: GridSpec,
                         truth: np.ndarray | None = None) -> bool:
    """Sandwich check on every grid center: inner implies ``pdf >= c`` implies outer."""
    if truth is None:
        truth = model.on_grid(grid.centers()) >= c
    inner = pair.inner.mask(grid)
    if np.any(inner & ~truth):
        return False
    outer = pair.outer.mask(grid)
    return not np.any(truth & ~outer)


# --------------------------------------------------------------------------- #
# export

def write_raster_csv(r: Region, grid: GridSpec, path, mask: np.ndarray | None = None) -> None:
    m = r.mask(grid) if mask is None else mask
    pts = grid.center_points()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "contained"])
        for (x, y), inside in zip(pts, m.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), int(inside)])


def mask_boundary(mask: np.ndarray, grid: GridSpec) -> Contour:
    """Outline of a raster mask as polylines through cell centers."""
    cx, cy = grid.centers()
    padded = np.pad(mask.astype(float), 1)
    dx, dy = grid.spacing
    ax = np.concatenate([[cx[0] - dx], cx, [cx[-1] + dx]])
    ay = np.concatenate([[cy[0] - dy], cy, [cy[-1] + dy]])

    class _Raster:
        def on_grid(self, axes):
            return padded

        def __call__(self, p):  # only used when refining, which is off
            raise NotImplementedError

    sub = GridSpec((ax[0], ay[0]), (ax[-1], ay[-1]), (len(ax) - 1, len(ay) - 1))
    return extract_contour(_Raster(), sub, 0.5, refine=False)


def region_svg(r: Region, grid: GridSpec, contours=(), points=None, size: int = 600,
               mask: np.ndarray | None = None) -> str:
    """SVG with the region outline (blue) over the given ``(contour, color)`` pairs."""
    m = r.mask(grid) if mask is None else mask
    layers = list(contours)
    if m.any():
        layers.insert(0, (mask_boundary(m, grid), "#1f77b4"))
    bounds = (grid.lower[0], grid.lower[1], grid.upper[0], grid.upper[1])
    return contour_svg(layers, bounds, size=size, points=points)

