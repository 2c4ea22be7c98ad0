"""Integral curves of the scaled gradient field ``grad f / |grad f|^2``.

Along such a curve the field value grows at unit rate, so the time needed to
reach level ``c`` from ``x0`` is exactly ``c - f(x0)``.  Curves are integrated
with fixed-step RK4 over that time span and the endpoint is polished onto the
level with Newton steps along the gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

__all__ = [
    "FlowOptions",
    "CurveTrace",
    "FlowBatch",
    "HIT",
    "GRADIENT_FLOOR",
    "BUDGET_EXCEEDED",
    "trace_to_level",
    "trace_batch",
    "hitting_point",
    "GridSurrogate",
    "SurrogateStack",
]

HIT = "hit"
GRADIENT_FLOOR = "gradient_floor"
BUDGET_EXCEEDED = "budget_exceeded"
_STATUS = np.array([HIT, GRADIENT_FLOOR, BUDGET_EXCEEDED])


class NonFiniteFieldError(FloatingPointError):
    """The driving field produced a non-finite value or gradient."""


@dataclass(frozen=True)
class FlowOptions:
    """Numerical controls for curve tracing.

    ``step_frac`` is the RK4 step as a fraction of the hitting time;
    ``grad_floor`` the smallest gradient norm trusted by the scaled field;
    ``max_steps`` bounds RK4 plus polishing iterations; ``level_tol`` is the
    accepted ``|f(endpoint) - c|``.
    """

    step_frac: float = 1 / 64
    grad_floor: float = 1e-3
    max_steps: int = 4096
    level_tol: float = 1e-8

    def __post_init__(self):
        if not (0 < self.step_frac <= 1 / 8):
            raise ValueError("step_frac must lie in (0, 1/8]")
        if not (self.grad_floor > 0 and self.max_steps > 0 and self.level_tol > 0):
            raise ValueError("flow options must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(1.0 / self.step_frac))


@dataclass
class CurveTrace:
    """A single traced curve.  ``theta`` is the signed hitting time."""

    seed: np.ndarray
    times: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    status: str
    theta: float
    level: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = self.positions.shape[1]
            w.writerow(["t"] + ["x", "y", "z"][:d] + ["f"])
            for t, p, f in zip(self.times, self.positions, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in p] + [repr(float(f))])


@dataclass
class FlowBatch:
    """Endpoints of many curves traced together.

    For non-hit curves ``endpoint``/``theta`` hold the fallback: the visited
    point closest to the level and its time.
    """

    seeds: np.ndarray
    endpoint: np.ndarray
    theta: np.ndarray
    status: np.ndarray
    end_value: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.status == HIT

    @property
    def failures(self) -> int:
        return int(np.count_nonzero(~self.hit))


def _value_and_grad(field, x):
    vg = getattr(field, "value_and_grad", None)
    if vg is not None:
        v, g = vg(x)
    else:
        v, g = field(x), field.grad(x)
    v = np.asarray(v, dtype=float)
    g = np.asarray(g, dtype=float).reshape(x.shape)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g))):
        raise NonFiniteFieldError("field or gradient is not finite along the curve")
    return v, g


def _grad(field, x):
    g = np.asarray(field.grad(x), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(g)):
        raise NonFiniteFieldError("gradient is not finite along the curve")
    return g


def trace_batch(field, seeds, c: float, opts: FlowOptions = FlowOptions(),
                record: bool = False):
    """Trace curves from every seed to level ``c`` under ``field``.

    ``field`` must be callable on ``m x d`` arrays and expose ``grad`` (and
    optionally ``value_and_grad``).  Returns a :class:`FlowBatch`; with
    ``record=True`` also the stacked ``(times, positions, values)`` history,
    each of leading length ``n_steps + 1``.
    """
    x = np.array(np.atleast_2d(seeds), dtype=float)
    m, d = x.shape
    f0, _ = _value_and_grad(field, x)
    theta = c - f0
    n = opts.n_steps
    dt = theta / n
    status = np.zeros(m, dtype=int)  # 0 hit, 1 floor, 2 budget
    floor2 = opts.grad_floor**2

    best_gap = np.abs(f0 - c)
    best_x = x.copy()
    best_t = np.zeros(m)
    cur_f = f0.copy()
    hist_x = [x.copy()] if record else None
    hist_f = [f0.copy()] if record else None

    # Seeds already on the level (to tolerance) are hits without moving.
    active = np.abs(theta) > opts.level_tol
    for step in range(n):
        idx = np.flatnonzero(active & (status == 0))
        if idx.size == 0:
            if record:
                hist_x.append(x.copy())
                hist_f.append(cur_f.copy())
            continue
        xi = x[idx]
        h = dt[idx, None]
        ok = np.ones(idx.size, dtype=bool)

        def vel(p):
            g = _grad(field, p)
            g2 = np.sum(g * g, axis=1)
            ok_here = g2 >= floor2
            return g / np.where(ok_here, g2, 1.0)[:, None], ok_here

        k1, o1 = vel(xi)
        k2, o2 = vel(xi + 0.5 * h * k1)
        k3, o3 = vel(xi + 0.5 * h * k2)
        k4, o4 = vel(xi + h * k3)
        ok &= o1 & o2 & o3 & o4
        xn = xi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        fn = np.asarray(field(xn), dtype=float)
        if not np.all(np.isfinite(fn)):
            raise NonFiniteFieldError("field is not finite along the curve")
        # The height gain per step must track dt; a large mismatch means the
        # scaled field is unreliable (near-critical point or overshoot).
        gain = fn - cur_f[idx]
        ok &= np.abs(gain - dt[idx]) <= 0.5 * np.abs(dt[idx])
        bad = idx[~ok]
        status[bad] = 1
        good = idx[ok]
        x[good] = xn[ok]
        cur_f[good] = fn[ok]
        gap = np.abs(fn[ok] - c)
        better = gap < best_gap[good]
        bi = good[better]
        best_gap[bi] = gap[better]
        best_x[bi] = xn[ok][better]
        best_t[bi] = dt[bi] * (step + 1)
        if record:
            hist_x.append(x.copy())
            hist_f.append(cur_f.copy())

    # Newton polish along the gradient for curves still on track.
    budget = opts.max_steps - n
    idx = np.flatnonzero(status == 0)
    resid = cur_f[idx] - c
    polish_iters = 0
    while idx.size and polish_iters < budget:
        todo = np.abs(resid) > opts.level_tol
        if not todo.any():
            break
        j = idx[todo]
        v, g = _value_and_grad(field, x[j])
        g2 = np.sum(g * g, axis=1)
        flat = g2 < floor2
        status[j[flat]] = 1
        live = ~flat
        j, v, g, g2 = j[live], v[live], g[live], g2[live]
        x[j] = x[j] + ((c - v) / g2)[:, None] * g
        cur_f[j] = np.asarray(field(x[j]), dtype=float)
        idx = np.flatnonzero(status == 0)
        resid = cur_f[idx] - c
        polish_iters += 1
    still = idx[np.abs(resid) > opts.level_tol]
    status[still] = 2

    hit = status == 0
    endpoint = np.where(hit[:, None], x, best_x)
    th = np.where(hit, theta, best_t)
    end_val = np.where(hit, cur_f, np.nan)
    miss = ~hit
    if miss.any():
        end_val[miss] = np.asarray(field(endpoint[miss]), dtype=float)
    batch = FlowBatch(seeds=np.atleast_2d(np.asarray(seeds, dtype=float)), endpoint=endpoint,
                      theta=th, status=_STATUS[status], end_value=end_val)
    if not record:
        return batch
    times = np.outer(np.arange(n + 1), dt)
    return batch, (times, np.stack(hist_x), np.stack(hist_f))


def trace_to_level(field, x0, c: float, opts: FlowOptions = FlowOptions()) -> CurveTrace:
    """Trace one curve from ``x0`` to level ``c`` and keep its history."""
    batch, (times, xs, fs) = trace_batch(field, np.atleast_2d(x0), c, opts, record=True)
    status = str(batch.status[0])
    t, p, f = times[:, 0], xs[:, 0, :], fs[:, 0]
    if status == HIT:
        # Replace the last RK4 node with the polished endpoint.
        p = p.copy()
        p[-1] = batch.endpoint[0]
        f = f.copy()
        f[-1] = batch.end_value[0]
    else:
        # Keep only the steps actually taken.
        moved = np.flatnonzero(np.any(np.diff(p, axis=0) != 0, axis=1))
        last = moved[-1] + 2 if moved.size else 1
        t, p, f = t[:last], p[:last], f[:last]
    return CurveTrace(seed=np.asarray(x0, dtype=float).ravel(), times=t, positions=p, values=f,
                      status=status, theta=float(batch.theta[0]), level=c)


def hitting_point(tr: CurveTrace) -> tuple[float, np.ndarray, bool]:
    """``(theta, point, is_hit)`` for a trace.

    Non-hit traces fall back to the visited point with the smallest
    ``|f - c|`` (earliest on ties).
    """
    if len(tr.times) == 0:
        raise ValueError("empty trace")
    if tr.status == HIT:
        return tr.theta, tr.positions[-1], True
    k = int(np.argmin(np.abs(tr.values - tr.level)))
    return float(tr.times[k]), tr.positions[k], False


# Maps nodal values/derivatives of a cell to cubic coefficients in the local
# coordinate s in [0, 1]: p(s) = [1, s, s^2, s^3] @ _HERMITE @ [f0, f1, f0', f1'].
_HERMITE = np.array([[1.0, 0.0, 0.0, 0.0],
                     [0.0, 0.0, 1.0, 0.0],
                     [-3.0, 3.0, -2.0, -1.0],
                     [2.0, -2.0, 1.0, 1.0]])


_HERMITE_2D = np.kron(_HERMITE, _HERMITE)


def _nodal_derivatives(field, xs, ys):
    on_grid = getattr(field, "on_grid", None)
    if on_grid is not None:
        try:
            return tuple(np.asarray(on_grid([xs, ys], deriv=dv), dtype=float)
                         for dv in ((0, 0), (1, 0), (0, 1), (1, 1)))
        except TypeError:
            pass
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = np.asarray(field(np.column_stack([X.ravel(), Y.ravel()])), dtype=float)
    spl = RectBivariateSpline(xs, ys, vals.reshape(len(xs), len(ys)), kx=3, ky=3, s=0)
    return (spl(xs, ys), spl(xs, ys, dx=1), spl(xs, ys, dy=1), spl(xs, ys, dx=1, dy=1))


def _hermite_coefficients(field, grid) -> np.ndarray:
    """Per-cell bicubic coefficients, shape ``(nx, ny, 16)``, in local cell units."""
    xs, ys = grid.nodes()
    dx, dy = grid.spacing
    f, fx, fy, fxy = _nodal_derivatives(field, xs, ys)
    fx, fy, fxy = fx * dx, fy * dy, fxy * dx * dy
    nx, ny = len(xs) - 1, len(ys) - 1
    lo, hi = slice(0, -1), slice(1, None)
    # Hermite data block [[f, f_y], [f_x, f_xy]] at corners (lo|hi, lo|hi),
    # flattened row-major; coefficients are one linear map of it.
    F = np.empty((nx, ny, 16))
    for a, (sx, ddx) in enumerate([(lo, 0), (hi, 0), (lo, 1), (hi, 1)]):
        for b, (sy, ddy) in enumerate([(lo, 0), (hi, 0), (lo, 1), (hi, 1)]):
            F[:, :, 4 * a + b] = ((f, fy), (fx, fxy))[ddx][ddy][sx, sy]
    return (F.reshape(-1, 16) @ _HERMITE_2D.T).reshape(nx, ny, 16)


class _HermitePatches:
    """Shared evaluation of one or more stacked bicubic patchworks."""

    def __init__(self, coef: np.ndarray, grid):
        self.grid = grid
        self._coef = coef.reshape(-1, 16)
        self._x0, self._y0 = grid.lower
        self._dx, self._dy = grid.spacing
        self._nx, self._ny = grid.resolution

    def _locate(self, x, layer=None):
        u = (x[:, 0] - self._x0) / self._dx
        v = (x[:, 1] - self._y0) / self._dy
        i = np.clip(np.floor(u).astype(np.intp), 0, self._nx - 1)
        j = np.clip(np.floor(v).astype(np.intp), 0, self._ny - 1)
        cell = i * self._ny + j
        if layer is not None:
            cell = cell + layer * (self._nx * self._ny)
        return self._coef[cell].reshape(-1, 4, 4), u - i, v - j

    @staticmethod
    def _powers(s):
        out = np.empty((len(s), 4))
        out[:, 0] = 1.0
        out[:, 1] = s
        out[:, 2] = s * s
        out[:, 3] = out[:, 2] * s
        return out

    @staticmethod
    def _slopes(s):
        out = np.empty((len(s), 4))
        out[:, 0] = 0.0
        out[:, 1] = 1.0
        out[:, 2] = 2 * s
        out[:, 3] = 3 * s * s
        return out

    def _value(self, x, layer=None):
        C, s, t = self._locate(x, layer)
        CT = np.einsum("mkl,ml->mk", C, self._powers(t))
        return np.einsum("mk,mk->m", self._powers(s), CT)

    def _value_grad(self, x, layer=None):
        C, s, t = self._locate(x, layer)
        S, T = self._powers(s), self._powers(t)
        CT = np.einsum("mkl,ml->mk", C, T)
        val = np.einsum("mk,mk->m", S, CT)
        gx = np.einsum("mk,mk->m", self._slopes(s), CT) / self._dx
        gy = np.einsum("mk,mkl,ml->m", S, C, self._slopes(t)) / self._dy
        return val, gx, gy


class GridSurrogate(_HermitePatches):
    """Bicubic Hermite interpolant of a two-dimensional field on grid nodes.

    Built from nodal values, first partials and the mixed partial, so it is
    continuously differentiable and exact for bicubic polynomials.  Many
    integral curves through one field are far cheaper on this patchwork
    than on the kernel sum; with nodes spaced well below the bandwidth the
    interpolation error is negligible for curve tracing.  Fields exposing
    ``on_grid(axes, deriv)`` supply exact nodal derivatives; others are
    differentiated through an interpolating spline.
    """

    d = 2

    def __init__(self, field, grid):
        if grid.d != 2:
            raise ValueError("the surrogate is two-dimensional")
        super().__init__(_hermite_coefficients(field, grid), grid)

    def __call__(self, x) -> np.ndarray:
        return self._value(np.asarray(x, dtype=float).reshape(-1, 2))

    def value_and_grad(self, x):
        v, gx, gy = self._value_grad(np.asarray(x, dtype=float).reshape(-1, 2))
        return v, np.column_stack([gx, gy])

    def grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def on_grid(self, axes) -> np.ndarray:
        ax, ay = (np.asarray(a, dtype=float) for a in axes)
        X, Y = np.meshgrid(ax, ay, indexing="ij")
        return self(np.column_stack([X.ravel(), Y.ravel()])).reshape(len(ax), len(ay))


class SurrogateStack(_HermitePatches):
    """Several two-dimensional fields traced together.

    Points carry a third coordinate naming their field (0, 1, ...); its
    gradient component is zero, so integral curves never change field.
    This lets one vectorized flow integration serve many fields at once.
    """

    d = 3

    def __init__(self, fields, grid):
        if grid.d != 2:
            raise ValueError("the surrogate is two-dimensional")
        coef = np.stack([_hermite_coefficients(f, grid) for f in fields])
        self.count = len(fields)
        super().__init__(coef, grid)

    def lift(self, points: np.ndarray) -> np.ndarray:
        """Replicate ``m x 2`` points for every field: ``(count * m) x 3``."""
        pts = np.asarray(points, dtype=float)
        layer = np.repeat(np.arange(self.count, dtype=float), len(pts))
        return np.column_stack([np.tile(pts, (self.count, 1)), layer])

    def _split(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        return x, x[:, 2].astype(np.intp)

    def __call__(self, x) -> np.ndarray:
        x, layer = self._split(x)
        return self._value(x, layer)

    def value_and_grad(self, x):
        x, layer = self._split(x)
        v, gx, gy = self._value_grad(x, layer)
        return v, np.column_stack([gx, gy, np.zeros_like(gx)])

    def grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]
