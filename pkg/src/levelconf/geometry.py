"""Level-set extraction and polyline geometry.

Contours of a scalar field are extracted by marching squares (d = 2) or sign
bracketing (d = 1); every vertex is then polished onto the level by bracketed
root finding along its grid edge.  Distances are exact point-to-segment
minimizations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "GridSpec",
    "Contour",
    "extract_contour",
    "contour_length",
    "resample",
    "equispaced_points",
    "dist_to_contour",
    "project_to_contour",
    "directed_hausdorff",
    "hausdorff",
    "write_contour_csv",
    "contour_svg",
]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box split into ``resolution[j]`` cells along axis ``j``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        res = tuple(int(v) for v in np.broadcast_to(np.atleast_1d(self.resolution), (len(lo),)))
        if not (len(lo) == len(hi) == len(res)):
            raise ValueError("lower, upper and resolution must have equal length")
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(lo, hi)):
            raise ValueError("grid bounds must be finite with lower < upper")
        if min(res) < 16:
            raise ValueError("grid resolution must be at least 16 cells per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "resolution", res)

    @classmethod
    def around(cls, points, pad, resolution) -> "GridSpec":
        """Bounding box of ``points`` padded by ``pad`` on every side."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        pad = np.broadcast_to(np.asarray(pad, dtype=float), (pts.shape[1],))
        return cls(tuple(pts.min(axis=0) - pad), tuple(pts.max(axis=0) + pad), resolution)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def nodes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, r + 1) for a, b, r in zip(self.lower, self.upper, self.resolution)]

    def centers(self) -> list[np.ndarray]:
        return [a + (np.arange(r) + 0.5) * s
                for a, r, s in zip(self.lower, self.resolution, self.spacing)]

    def center_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.centers(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class Contour:
    """Estimated isosurface at ``level``.

    For ``d = 2`` the contour is a list of polylines (``components``) with a
    closed flag each; for ``d = 1`` it is a sorted array of ``points``.
    """

    level: float
    dim: int
    components: list[np.ndarray] = field(default_factory=list)
    closed: list[bool] = field(default_factory=list)
    points: np.ndarray | None = None
    field_fn: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def empty(self) -> bool:
        if self.dim == 1:
            return self.points is None or len(self.points) == 0
        return not any(len(c) for c in self.components)

    @property
    def total_length(self) -> float:
        if self.dim == 1:
            return float(self.n_hat)
        return contour_length(self)

    @property
    def n_hat(self) -> int:
        if self.dim != 1:
            raise ValueError("point count is defined for d = 1 contours only")
        return 0 if self.points is None else len(self.points)

    def vertices(self) -> np.ndarray:
        """All vertices stacked as an ``m x d`` array."""
        if self.dim == 1:
            return np.zeros((0, 1)) if self.points is None else self.points.reshape(-1, 1)
        if not self.components:
            return np.zeros((0, 2))
        return np.concatenate(self.components, axis=0)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Segment endpoints ``(A, B)``; isolated vertices become zero-length segments."""
        if self.dim == 1:
            v = self.vertices()
            return v, v
        A, B = [], []
        for comp, closed in zip(self.components, self.closed):
            if len(comp) == 1:
                A.append(comp)
                B.append(comp)
                continue
            A.append(comp[:-1])
            B.append(comp[1:])
            if closed:
                A.append(comp[-1:])
                B.append(comp[:1])
        if not A:
            return np.zeros((0, 2)), np.zeros((0, 2))
        return np.concatenate(A), np.concatenate(B)


# --------------------------------------------------------------------------- #
# extraction

def _grid_values(fn, grid: GridSpec) -> np.ndarray:
    nodes = grid.nodes()
    on_grid = getattr(fn, "on_grid", None)
    if on_grid is not None:
        vals = np.asarray(on_grid(nodes), dtype=float)
    else:
        mesh = np.meshgrid(*nodes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = np.asarray(fn(pts), dtype=float).reshape([len(a) for a in nodes])
    if np.isnan(vals).any():
        raise ValueError("field returned NaN on the grid")
    return vals


def _refine_on_edges(fn, p0: np.ndarray, p1: np.ndarray, v0: np.ndarray, v1: np.ndarray,
                     c: float, tol: float, iterations: int = 60) -> np.ndarray:
    """Root of ``fn - c`` on segments ``p0 -> p1`` with ``(v0 - c)(v1 - c) <= 0``.

    Illinois-modified regula falsi; the bracket is kept throughout so every
    iterate stays on its edge.
    """
    a = np.zeros(len(p0))
    b = np.ones(len(p0))
    fa = v0 - c
    fb = v1 - c
    t = np.where(fa == fb, 0.5, fa / np.where(fa == fb, 1.0, fa - fb))
    side = np.zeros(len(p0), dtype=int)
    active = np.ones(len(p0), dtype=bool)
    for _ in range(iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pts = p0[idx] + t[idx, None] * (p1[idx] - p0[idx])
        ft = np.asarray(fn(pts), dtype=float) - c
        if np.isnan(ft).any():
            raise ValueError("field returned NaN during level refinement")
        done = np.abs(ft) <= tol
        same_a = np.sign(ft) == np.sign(fa[idx])
        # Replace the endpoint on the same side; halve the stale one (Illinois).
        ia = idx[same_a]
        a[ia], fa[ia] = t[ia], ft[same_a]
        stale_b = ia[side[ia] == 1]
        fb[stale_b] *= 0.5
        side[ia] = 1
        ib = idx[~same_a]
        b[ib], fb[ib] = t[ib], ft[~same_a]
        stale_a = ib[side[ib] == -1]
        fa[stale_a] *= 0.5
        side[ib] = -1
        active[idx[done]] = False
        width = b - a
        denom = fa - fb
        nxt = np.where(denom != 0, a + width * fa / np.where(denom != 0, denom, 1.0), a + 0.5 * width)
        bad = (nxt <= a) | (nxt >= b) | ~np.isfinite(nxt)
        nxt = np.where(bad, a + 0.5 * width, nxt)
        t = np.where(active, nxt, t)
        active &= width > 1e-15
    return p0 + t[:, None] * (p1 - p0)


def extract_contour(field_fn, grid: GridSpec, c: float, level_tol: float | None = None,
                    refine: bool = True) -> Contour:
    """Extract the level set ``{field = c}`` on ``grid``.

    ``field_fn`` maps an ``m x d`` array to ``m`` values; if it also has an
    ``on_grid(nodes)`` method that is used for the grid pass.  When no grid
    edge changes sign the returned contour is empty (check ``.empty``).
    """
    vals = _grid_values(field_fn, grid)
    if level_tol is None:
        level_tol = 1e-9 * max(float(np.abs(vals).max()), abs(c), 1e-300)
    if grid.d == 1:
        return _extract_1d(field_fn, grid, vals, c, level_tol, refine)
    if grid.d != 2:
        raise NotImplementedError("contour extraction supports d = 1 and d = 2")
    return _marching_squares(field_fn, grid, vals, c, level_tol, refine)


def _extract_1d(fn, grid, vals, c, tol, refine) -> Contour:
    (x,) = grid.nodes()
    above = vals >= c
    on = np.flatnonzero(vals == c)
    cross = np.flatnonzero(above[:-1] != above[1:])
    cross = cross[(vals[cross] != c) & (vals[cross + 1] != c)]
    p0, p1 = x[cross, None], x[cross + 1, None]
    v0, v1 = vals[cross], vals[cross + 1]
    if refine and len(cross):
        roots = _refine_on_edges(fn, p0, p1, v0, v1, c, tol)[:, 0]
    else:
        roots = (p0 + ((c - v0) / (v1 - v0))[:, None] * (p1 - p0))[:, 0]
    pts = np.sort(np.concatenate([roots, x[on]]))
    return Contour(level=c, dim=1, points=pts, field_fn=fn)


# Edge slots within a cell: 0 bottom (y = y_j), 1 right (x = x_{i+1}),
# 2 top (y = y_{j+1}), 3 left (x = x_i).
_SEGMENT_TABLE = {
    # case -> list of (slot, slot); corner bits: 1=(i,j), 2=(i+1,j), 4=(i+1,j+1), 8=(i,j+1)
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 6: [(0, 2)], 7: [(3, 2)],
    8: [(2, 3)], 9: [(0, 2)], 11: [(1, 2)], 12: [(1, 3)], 13: [(0, 1)], 14: [(3, 0)],
}
_SADDLE = {
    # (case, center above) -> segments
    (5, True): [(0, 1), (2, 3)], (5, False): [(3, 0), (1, 2)],
    (10, True): [(3, 0), (1, 2)], (10, False): [(0, 1), (2, 3)],
}


def _marching_squares(fn, grid, vals, c, tol, refine) -> Contour:
    xs, ys = grid.nodes()
    nx, ny = len(xs) - 1, len(ys) - 1
    above = vals >= c
    case = (above[:-1, :-1] * 1 + above[1:, :-1] * 2 + above[1:, 1:] * 4 + above[:-1, 1:] * 8)
    ci, cj = np.nonzero((case != 0) & (case != 15))
    if ci.size == 0:
        return Contour(level=c, dim=2, field_fn=fn)
    cases = case[ci, cj]

    # Edge ids: horizontal edge (i, j)->(i+1, j) is i*(ny+1)+j; vertical edge
    # (i, j)->(i, j+1) is H + i*ny + j.
    H = nx * (ny + 1)

    def slot_ids(i, j):
        return np.stack([i * (ny + 1) + j, H + (i + 1) * ny + j,
                         i * (ny + 1) + j + 1, H + i * ny + j], axis=-1)

    ids = slot_ids(ci, cj)
    sa, sb = [], []
    saddle = (cases == 5) | (cases == 10)
    if saddle.any():
        si = np.flatnonzero(saddle)
        centers = np.stack([0.5 * (xs[ci[si]] + xs[ci[si] + 1]), 0.5 * (ys[cj[si]] + ys[cj[si] + 1])], axis=-1)
        cval = np.asarray(fn(centers), dtype=float)
        for k, v in zip(si, cval):
            for a, b in _SADDLE[(int(cases[k]), bool(v >= c))]:
                sa.append(ids[k, a])
                sb.append(ids[k, b])
    plain = np.flatnonzero(~saddle)
    if plain.size:
        lookup = np.zeros((16, 2), dtype=int)
        for k, segs in _SEGMENT_TABLE.items():
            lookup[k] = segs[0]
        pair = lookup[cases[plain]]
        rows = ids[plain]
        sa.extend(rows[np.arange(len(plain)), pair[:, 0]].tolist())
        sb.extend(rows[np.arange(len(plain)), pair[:, 1]].tolist())
    sa = np.asarray(sa, dtype=np.int64)
    sb = np.asarray(sb, dtype=np.int64)

    # Vertex positions for every crossing edge, computed once.
    edges = np.unique(np.concatenate([sa, sb]))
    horiz = edges < H
    p0 = np.empty((len(edges), 2))
    p1 = np.empty((len(edges), 2))
    v0 = np.empty(len(edges))
    v1 = np.empty(len(edges))
    e = edges[horiz]
    i, j = e // (ny + 1), e % (ny + 1)
    p0[horiz] = np.stack([xs[i], ys[j]], axis=-1)
    p1[horiz] = np.stack([xs[i + 1], ys[j]], axis=-1)
    v0[horiz], v1[horiz] = vals[i, j], vals[i + 1, j]
    e = edges[~horiz] - H
    i, j = e // ny, e % ny
    p0[~horiz] = np.stack([xs[i], ys[j]], axis=-1)
    p1[~horiz] = np.stack([xs[i], ys[j + 1]], axis=-1)
    v0[~horiz], v1[~horiz] = vals[i, j], vals[i, j + 1]
    if refine:
        verts = _refine_on_edges(fn, p0, p1, v0, v1, c, tol)
    else:
        t = np.clip((c - v0) / np.where(v1 != v0, v1 - v0, 1.0), 0.0, 1.0)
        verts = p0 + t[:, None] * (p1 - p0)
    pos = {int(k): n for n, k in enumerate(edges)}

    comps, closed = _chain(sa.tolist(), sb.tolist())
    components = [verts[[pos[k] for k in chain]] for chain in comps]
    return Contour(level=c, dim=2, components=components, closed=closed, field_fn=fn)


def _chain(sa: list[int], sb: list[int]) -> tuple[list[list[int]], list[bool]]:
    """Link segments sharing edge ids into polylines."""
    adj: dict[int, list[int]] = {}
    for a, b in zip(sa, sb):
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen: set[int] = set()
    chains, closed = [], []

    def walk(start: int) -> list[int]:
        path = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [v for v in adj[cur] if v != prev and v not in seen]
            if not nxt:
                return path
            prev, cur = cur, nxt[0]
            seen.add(cur)
            path.append(cur)

    # Open chains start at degree-1 vertices (grid boundary); the rest are loops.
    for node, nbrs in adj.items():
        if len(nbrs) == 1 and node not in seen:
            chains.append(walk(node))
            closed.append(False)
    for node in adj:
        if node not in seen:
            path = walk(node)
            chains.append(path)
            closed.append(len(path) > 2 and path[0] in adj[path[-1]])
    return chains, closed


# --------------------------------------------------------------------------- #
# polyline measures

def contour_length(ct: Contour) -> float:
    """Total polyline length of a two-dimensional contour."""
    if ct.dim != 2:
        raise ValueError("contour length needs a d = 2 contour; use the point count for d = 1")
    A, B = ct.segments()
    return float(np.linalg.norm(B - A, axis=1).sum()) if len(A) else 0.0


def resample(ct: Contour, max_spacing: float, field_fn=None) -> Contour:
    """Subdivide every segment into equal pieces no longer than ``max_spacing``.

    With a field (argument or the contour's own ``field_fn`` when it exposes a
    ``grad``) the inserted vertices are pulled back onto the level set by a
    few Newton steps along the local gradient.
    """
    if max_spacing <= 0:
        raise ValueError("max_spacing must be positive")
    if ct.dim == 1 or ct.empty:
        return ct
    fn = field_fn if field_fn is not None else ct.field_fn
    can_polish = fn is not None and hasattr(fn, "grad")
    out = []
    for comp, closed in zip(ct.components, ct.closed):
        if len(comp) < 2:
            out.append(comp)
            continue
        pts = np.vstack([comp, comp[:1]]) if closed else comp
        seg = np.diff(pts, axis=0)
        L = np.linalg.norm(seg, axis=1)
        pieces = np.maximum(1, np.ceil(L / max_spacing - 1e-12).astype(int))
        if pieces.max() == 1:
            out.append(comp)
            continue
        starts = np.repeat(pts[:-1], pieces, axis=0)
        frac = np.concatenate([np.arange(k) / k for k in pieces])
        new = starts + frac[:, None] * np.repeat(seg, pieces, axis=0)
        if not closed:
            new = np.vstack([new, pts[-1:]])
        if can_polish:
            inserted = frac > 0
            if not closed:
                inserted = np.append(inserted, False)
            new[inserted] = _polish(fn, new[inserted], ct.level, limit=max_spacing)
        out.append(new)
    return Contour(level=ct.level, dim=2, components=out, closed=list(ct.closed), field_fn=ct.field_fn)


def equispaced_points(ct: Contour, count: int, polish: bool = True) -> Contour:
    """``count`` vertices spread evenly by arclength over all components.

    Components receive points in proportion to their length; the result keeps
    the closed flags so it is still a valid polyline.  Points are polished
    onto the level when the contour carries a field with a gradient.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if ct.dim != 2 or ct.empty:
        return ct
    polylines, lengths = [], []
    for comp, closed in zip(ct.components, ct.closed):
        pts = np.vstack([comp, comp[:1]]) if closed and len(comp) > 1 else comp
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        polylines.append((pts, np.concatenate([[0.0], np.cumsum(seg)]), closed))
        lengths.append(seg.sum())
    total = float(np.sum(lengths))
    if total == 0:
        return ct
    targets = (np.arange(count) + 0.5) * total / count
    offsets = np.concatenate([[0.0], np.cumsum(lengths)])
    comps, closed_out = [], []
    fn = ct.field_fn if polish and ct.field_fn is not None and hasattr(ct.field_fn, "grad") else None
    for (pts, cum, closed), lo, hi in zip(polylines, offsets[:-1], offsets[1:]):
        s = targets[(targets >= lo) & (targets < hi)] - lo
        if len(s) == 0:
            continue
        new = np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])
        if fn is not None:
            new = _polish(fn, new, ct.level, limit=total / count)
        comps.append(new)
        closed_out.append(closed)
    return Contour(level=ct.level, dim=2, components=comps, closed=closed_out, field_fn=ct.field_fn)


def _polish(fn, pts: np.ndarray, c: float, limit: float, steps: int = 3) -> np.ndarray:
    if len(pts) == 0:
        return pts
    x = pts.copy()
    for _ in range(steps):
        v = np.asarray(fn(x), dtype=float)
        g = np.asarray(fn.grad(x), dtype=float)
        g2 = np.sum(g * g, axis=1)
        ok = g2 > 0
        step = np.where(ok, (c - v) / np.where(ok, g2, 1.0), 0.0)
        x = x + step[:, None] * g
    # A polish that wanders off (flat field, other branch) keeps the chord point.
    bad = ~np.all(np.isfinite(x), axis=1) | (np.linalg.norm(x - pts, axis=1) > limit)
    x[bad] = pts[bad]
    return x


def _point_segment_dist2(P: np.ndarray, A: np.ndarray, B: np.ndarray):
    """Squared distances ``(m, s)`` and segment parameters from points to segments."""
    AB = B - A
    L2 = np.sum(AB * AB, axis=1)
    AP = P[:, None, :] - A[None, :, :]
    t = np.einsum("msd,sd->ms", AP, AB) / np.where(L2 > 0, L2, 1.0)
    t = np.clip(np.where(L2 > 0, t, 0.0), 0.0, 1.0)
    diff = AP - t[..., None] * AB[None]
    return np.einsum("msd,msd->ms", diff, diff), t


def _nearest_brute(P: np.ndarray, A: np.ndarray, B: np.ndarray, chunk: int = 4_000_000):
    step = max(1, chunk // max(1, len(A)))
    best = np.empty(len(P))
    proj = np.empty_like(P)
    for s in range(0, len(P), step):
        blk = P[s:s + step]
        d2, t = _point_segment_dist2(blk, A, B)
        k = np.argmin(d2, axis=1)
        r = np.arange(len(blk))
        best[s:s + step] = np.sqrt(d2[r, k])
        proj[s:s + step] = A[k] + t[r, k, None] * (B[k] - A[k])
    return best, proj


_CANDIDATES = 16


def _nearest(P: np.ndarray, ct: Contour):
    """Exact nearest contour point for each row of ``P``.

    Candidate segments come from a k-d tree over segment midpoints.  A
    segment is never closer than its midpoint distance minus its half
    length, so when the k-th candidate midpoint is farther than the best
    candidate distance plus the largest half length no other segment can
    win; the remaining points fall back to a full scan.
    """
    if ct.empty:
        raise ValueError("distance to an empty contour is undefined")
    A, B = ct.segments()
    P = np.atleast_2d(np.asarray(P, dtype=float))
    k = min(_CANDIDATES, len(A))
    if len(A) <= 4 * _CANDIDATES:
        return _nearest_brute(P, A, B)
    half = 0.5 * float(np.max(np.linalg.norm(B - A, axis=1)))
    tree = cKDTree(0.5 * (A + B))
    dk, cand = tree.query(P, k=k)
    Ac, Bc = A[cand], B[cand]
    AB = Bc - Ac
    L2 = np.sum(AB * AB, axis=2)
    AP = P[:, None, :] - Ac
    t = np.clip(np.sum(AP * AB, axis=2) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    diff = AP - t[..., None] * AB
    d2 = np.sum(diff * diff, axis=2)
    j = np.argmin(d2, axis=1)
    r = np.arange(len(P))
    best = np.sqrt(d2[r, j])
    proj = Ac[r, j] + t[r, j, None] * AB[r, j]
    unsure = np.flatnonzero(dk[:, -1] - half < best)
    if unsure.size:
        # every segment that could beat the candidate has its midpoint in this ball
        balls = tree.query_ball_point(P[unsure], best[unsure] + half * (1 + 1e-9) + 1e-300)
        counts = np.array([len(b) for b in balls])
        owner = np.repeat(np.arange(unsure.size), counts)
        seg = np.concatenate([np.asarray(b, dtype=np.intp) for b in balls])
        Q = P[unsure][owner]
        ab = B[seg] - A[seg]
        l2 = np.sum(ab * ab, axis=1)
        ap = Q - A[seg]
        tt = np.clip(np.sum(ap * ab, axis=1) / np.where(l2 > 0, l2, 1.0), 0.0, 1.0)
        dd = np.sum((ap - tt[:, None] * ab) ** 2, axis=1)
        order = np.lexsort((dd, owner))
        first = order[np.searchsorted(owner[order], np.arange(unsure.size))]
        better = dd[first] < best[unsure] ** 2
        hit = unsure[better]
        f = first[better]
        best[hit] = np.sqrt(dd[f])
        proj[hit] = A[seg[f]] + tt[f, None] * ab[f]
    return best, proj


def dist_to_contour(x, ct: Contour) -> np.ndarray:
    """Euclidean distance from point(s) ``x`` to the contour."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and ct.dim > 1 or x.ndim == 0
    pts = x.reshape(-1, ct.dim)
    d, _ = _nearest(pts, ct)
    return float(d[0]) if single else d


def project_to_contour(x, ct: Contour):
    """Nearest contour point and its distance."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and ct.dim > 1 or x.ndim == 0
    pts = x.reshape(-1, ct.dim)
    d, p = _nearest(pts, ct)
    if single:
        return p[0], float(d[0])
    return p, d


def directed_hausdorff(a: Contour, b: Contour) -> float:
    """``max_{v in vertices(a)} dist(v, b)``."""
    if a.empty or b.empty:
        raise ValueError("Hausdorff distance needs non-empty contours")
    d, _ = _nearest(a.vertices(), b)
    return float(d.max())


def hausdorff(a: Contour, b: Contour) -> float:
    """Symmetric Hausdorff distance between vertex-resampled contours."""
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))


# --------------------------------------------------------------------------- #
# export

def write_contour_csv(ct: Contour, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if ct.dim == 1:
            w.writerow(["component_id", "vertex_index", "x"])
            for k, p in enumerate(ct.vertices()[:, 0]):
                w.writerow([k, 0, repr(float(p))])
            return
        w.writerow(["component_id", "vertex_index", "x", "y"])
        for cid, comp in enumerate(ct.components):
            for vid, (x, y) in enumerate(comp):
                w.writerow([cid, vid, repr(float(x)), repr(float(y))])


def contour_svg(contours: Sequence[tuple[Contour, str]], bounds, size: int = 600,
                points: np.ndarray | None = None) -> str:
    """Static SVG with one polyline per contour component.

    ``contours`` pairs each contour with a stroke color; ``bounds`` is
    ``(xmin, ymin, xmax, ymax)`` in data units.
    """
    x0, y0, x1, y1 = bounds
    sx = size / (x1 - x0)
    sy = size / (y1 - y0)

    def tr(p):
        return f"{(p[0] - x0) * sx:.2f},{(y1 - p[1]) * sy:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    if points is not None:
        for p in np.asarray(points):
            a, b = tr(p).split(",")
            parts.append(f'<circle cx="{a}" cy="{b}" r="1.5" fill="#888"/>')
    for ct, color in contours:
        for comp, closed in zip(ct.components, ct.closed):
            tag = "polygon" if closed else "polyline"
            pts = " ".join(tr(p) for p in comp)
            parts.append(f'<{tag} points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
