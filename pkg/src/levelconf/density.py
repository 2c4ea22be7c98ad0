"""Kernel density estimation with analytic derivatives.

Three estimator kinds share one evaluation engine:

* ``plain``: ``f(x) = 1/(n prod h) sum_i K((x - X_i) / h)``
* ``bias_corrected``: ``f(x) - 1/2 mu2 sum_j h_j^2 d^2/dx_j^2 f_l(x)``
* ``bootstrap_mean``: the exact smoothed-bootstrap mean ``f_g * K_h``

Each estimator is a linear combination of derivative terms of plain KDEs
(or of convolved-profile sums), which makes gradients and Hessians of every
kind a matter of shifting multi-indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernel import ConvolvedProfile, KernelSpec, constants, convolved_profile, inverse_cdf_table

__all__ = [
    "Dataset",
    "Bandwidths",
    "DensityEstimator",
    "fit",
    "bias_term",
    "bootstrap_mean_eval",
    "sample_smoothed",
    "sample_standard",
    "DataFormatError",
    "read_dataset",
    "write_dataset",
]

# Upper bound on (query, data) pairs materialized at once.
_PAIR_BUDGET = 2_000_000


@dataclass(frozen=True)
class Dataset:
    """An ``n x d`` sample of finite coordinates, ``n >= 2``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("dataset must be a non-empty n x d array")
        if pts.shape[0] < 2:
            raise ValueError("dataset needs at least two observations")
        if not np.all(np.isfinite(pts)):
            raise ValueError("dataset contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


def as_dataset(data) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset(data)


class DataFormatError(ValueError):
    """A data file that cannot be parsed as numeric CSV."""


def read_dataset(path) -> Dataset:
    """Read a headerless CSV, one observation per row."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no observations")
    if len({len(r) for r in rows}) != 1:
        raise DataFormatError(f"{path}: ragged rows")
    try:
        return Dataset(np.array(rows))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_dataset(data, path) -> None:
    pts = as_dataset(data).points
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in pts:
            w.writerow([repr(float(v)) for v in row])


def _positive_vector(value, d: int, name: str) -> np.ndarray:
    v = np.broadcast_to(np.asarray(value, dtype=float), (d,)).copy()
    if not np.all(v > 0) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be strictly positive, got {value!r}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class Bandwidths:
    """Per-axis bandwidth vectors: ``h`` estimation, ``l`` bias correction,
    ``g`` smoothed-bootstrap resampling."""

    h: np.ndarray
    l: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        d = np.size(self.h)
        for name in ("h", "l", "g"):
            object.__setattr__(self, name, _positive_vector(getattr(self, name), d, name))

    def scaled(self, factor: float, which: str = "hg") -> "Bandwidths":
        kw = {k: getattr(self, k) * (factor if k in which else 1.0) for k in ("h", "l", "g")}
        return Bandwidths(**kw)

    @property
    def h_eff(self) -> float:
        """Geometric mean of ``h``; preserves ``n h^d``."""
        return float(np.exp(np.mean(np.log(self.h))))


class _SortedIndex:
    """Data sorted along axis 0 for band-limited neighbor search."""

    def __init__(self, points: np.ndarray):
        order = np.argsort(points[:, 0], kind="stable")
        self.order = order
        self.points = points[order]
        self.axis0 = self.points[:, 0]

    def pairs(self, queries: np.ndarray, radius: np.ndarray):
        """Yield chunks ``(q_idx, d_idx)`` of candidate pairs with
        ``|X_i0 - x_0| <= radius_0`` (sorted-order data indices)."""
        lo = np.searchsorted(self.axis0, queries[:, 0] - radius[0], side="left")
        hi = np.searchsorted(self.axis0, queries[:, 0] + radius[0], side="right")
        counts = hi - lo
        m = len(queries)
        start = 0
        cum = np.cumsum(counts)
        while start < m:
            base = cum[start - 1] if start else 0
            stop = int(np.searchsorted(cum, base + _PAIR_BUDGET, side="right"))
            stop = max(stop, start + 1)
            c = counts[start:stop]
            total = int(c.sum())
            if total:
                q_idx = np.repeat(np.arange(start, stop), c)
                offs = np.repeat(np.cumsum(c) - c, c)
                d_idx = np.arange(total) - offs + np.repeat(lo[start:stop], c)
                yield q_idx, d_idx
            start = stop


# A term is (coefficient, bandwidth key, multi-index). Bandwidth key selects
# which scaled data table the term uses.
Term = tuple[float, str, tuple[int, ...]]


class DensityEstimator:
    """A fitted kernel density estimator.

    Parameters
    ----------
    dataset : Dataset or array_like
        ``n x d`` sample.
    kernel : KernelSpec
        Product kernel of matching dimension.
    bandwidth : array_like
        Estimation bandwidth ``h`` (scalar or per-axis).
    kind : {"plain", "bias_corrected", "bootstrap_mean"}
        Estimator variant.
    aux_bandwidth : array_like, optional
        ``l`` for ``bias_corrected``, ``g`` for ``bootstrap_mean``.
    prune : bool
        Use the sorted-index neighbor search (default); ``False`` sums over
        all observations and exists mainly as a test oracle.

    Estimators are immutable once constructed.
    """

    KINDS = ("plain", "bias_corrected", "bootstrap_mean")

    def __init__(self, dataset, kernel: KernelSpec, bandwidth, kind: str = "plain",
                 aux_bandwidth=None, prune: bool = True):
        self.dataset = as_dataset(dataset)
        if kernel.dimension != self.dataset.d:
            raise ValueError(
                f"kernel dimension {kernel.dimension} does not match data dimension {self.dataset.d}"
            )
        if kind not in self.KINDS:
            raise ValueError(f"unknown estimator kind {kind!r}")
        self.kernel = kernel
        self.kind = kind
        d = self.dataset.d
        self.h = _positive_vector(bandwidth, d, "bandwidth")
        self.aux = None
        self.prune = prune
        self._bandwidths = {"h": self.h}
        self._profiles: list[ConvolvedProfile] | None = None
        if kind == "bias_corrected":
            if aux_bandwidth is None:
                raise ValueError("bias_corrected estimator needs the bandwidth l")
            self.aux = _positive_vector(aux_bandwidth, d, "l")
            self._bandwidths["l"] = self.aux
        elif kind == "bootstrap_mean":
            if aux_bandwidth is None:
                raise ValueError("bootstrap_mean estimator needs the bandwidth g")
            self.aux = _positive_vector(aux_bandwidth, d, "g")
            self._profiles = [convolved_profile(kernel, self.h[j], self.aux[j]) for j in range(d)]
            self._bandwidths = {"c": self.h + self.aux}
        self._index = {key: _SortedIndex(self.dataset.points) for key in self._bandwidths} if prune else {}
        self._grid_cache: dict = {}

    # ------------------------------------------------------------------ terms
    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def n(self) -> int:
        return self.dataset.n

    def _value_terms(self) -> list[Term]:
        d = self.d
        zero = (0,) * d
        if self.kind == "plain":
            return [(1.0, "h", zero)]
        if self.kind == "bootstrap_mean":
            return [(1.0, "c", zero)]
        mu2 = constants(self.kernel).mu2
        terms: list[Term] = [(1.0, "h", zero)]
        for j in range(d):
            idx = [0] * d
            idx[j] = 2
            terms.append((-0.5 * mu2 * self.h[j] ** 2, "l", tuple(idx)))
        return terms

    def _shifted(self, terms: list[Term], axes: Sequence[int]) -> list[Term]:
        out = []
        for coef, key, idx in terms:
            new = list(idx)
            for a in axes:
                new[a] += 1
            out.append((coef, key, tuple(new)))
        return out

    # ------------------------------------------------------------- evaluation
    def _points(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x, single = x.reshape(1, 1), True
        elif x.ndim == 1:
            single = self.d > 1
            x = x[None, :] if single else x[:, None]
        else:
            single = False
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got shape {x.shape}")
        return x, single

    def _factor(self, key: str, j: int, u: np.ndarray, order: int) -> np.ndarray:
        if key == "c":
            prof = self._profiles[j]
            if order == 0:
                return prof(u)
            if order == 1:
                return prof.derivative(u)
            raise NotImplementedError("bootstrap-mean estimator supports first derivatives only")
        return self.kernel.profile(u, order)

    def _scale(self, key: str, idx: tuple[int, ...]) -> float:
        # 1/(n prod h) * prod h_j^-idx_j for kernel terms; convolved profiles
        # are already densities in data units.
        if key == "c":
            return 1.0 / self.n
        bw = self._bandwidths[key]
        return float(1.0 / (self.n * np.prod(bw)) / np.prod(bw ** np.asarray(idx)))

    def _evaluate_terms(self, x: np.ndarray, groups: list[list[Term]]) -> list[np.ndarray]:
        """Evaluate several term lists at the query points ``x`` (m x d)."""
        m = len(x)
        out = [np.zeros(m) for _ in groups]
        keys = sorted({t[1] for g in groups for t in g})
        for key in keys:
            bw = self._bandwidths[key]
            # For raw kernel terms, u = (x - X)/bw; for convolved profiles the
            # tabulated function takes the raw difference.
            scale_u = bw if key != "c" else np.ones_like(bw)
            if self.prune:
                index = self._index[key]
                data = index.points
                chunks = index.pairs(x, bw)
            else:
                data = self.dataset.points
                chunks = [_dense_pairs(m, self.n)]
            for q_idx, d_idx in chunks:
                u = (x[q_idx] - data[d_idx]) / scale_u
                inside = np.all(np.abs(u) <= (1.0 if key != "c" else bw), axis=1)
                if not inside.all():
                    q_idx, u = q_idx[inside], u[inside]
                if len(q_idx) == 0:
                    continue
                cache: dict = {}
                for gi, terms in enumerate(groups):
                    for coef, tkey, idx in terms:
                        if tkey != key:
                            continue
                        w = None
                        for j, order in enumerate(idx):
                            if (j, order) not in cache:
                                cache[(j, order)] = self._factor(key, j, u[:, j], order)
                            w = cache[(j, order)] if w is None else w * cache[(j, order)]
                        out[gi] += coef * self._scale(key, idx) * np.bincount(q_idx, weights=w, minlength=m)
        return out

    def eval(self, x) -> np.ndarray:
        """Estimator value at one point (``d``-vector) or many (``m x d``)."""
        pts, single = self._points(x)
        (val,) = self._evaluate_terms(pts, [self._value_terms()])
        return val[0] if single else val

    __call__ = eval

    def _grad_groups(self):
        base = self._value_terms()
        return [self._shifted(base, [a]) for a in range(self.d)]

    def eval_grad(self, x) -> np.ndarray:
        pts, single = self._points(x)
        parts = self._evaluate_terms(pts, self._grad_groups())
        g = np.stack(parts, axis=-1)
        return g[0] if single else g

    grad = eval_grad

    def value_and_grad(self, x) -> tuple[np.ndarray, np.ndarray]:
        pts, single = self._points(x)
        parts = self._evaluate_terms(pts, [self._value_terms()] + self._grad_groups())
        val, g = parts[0], np.stack(parts[1:], axis=-1)
        return (val[0], g[0]) if single else (val, g)

    def eval_hessian(self, x) -> np.ndarray:
        pts, single = self._points(x)
        base = self._value_terms()
        d = self.d
        pairs = [(a, b) for a in range(d) for b in range(a, d)]
        parts = self._evaluate_terms(pts, [self._shifted(base, [a, b]) for a, b in pairs])
        H = np.empty((len(pts), d, d))
        for (a, b), v in zip(pairs, parts):
            H[:, a, b] = v
            H[:, b, a] = v
        return H[0] if single else H

    hessian = eval_hessian

    # ------------------------------------------------------------------ grids
    def on_grid(self, axes: Sequence[np.ndarray], deriv: Sequence[int] | None = None) -> np.ndarray:
        """Values (or the partial derivative of multi-order ``deriv``) on the
        tensor grid spanned by per-axis node vectors.

        For ``d = 2`` this is a separable matrix product, exact up to
        rounding; other dimensions fall back to pointwise evaluation.
        """
        axes = [np.asarray(a, dtype=float) for a in axes]
        deriv = tuple(deriv) if deriv is not None else (0,) * self.d
        key = tuple((a[0], a[-1], len(a)) for a in axes) + (deriv,)
        hit = self._grid_cache.get(key)
        if hit is not None:
            return hit
        shift = [j for j, k in enumerate(deriv) for _ in range(k)]
        terms = self._shifted(self._value_terms(), shift)
        if self.d == 2:
            out = np.zeros((len(axes[0]), len(axes[1])))
            X = self.dataset.points
            for coef, bkey, idx in terms:
                A = self._axis_table(bkey, 0, axes[0], X[:, 0], idx[0])
                B = self._axis_table(bkey, 1, axes[1], X[:, 1], idx[1])
                out += coef * self._scale(bkey, idx) * (A.T @ B)
        else:
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=-1)
            (vals,) = self._evaluate_terms(pts, [terms])
            out = vals.reshape(tuple(len(a) for a in axes))
        out.setflags(write=False)
        if len(self._grid_cache) > 8:
            self._grid_cache.clear()
        self._grid_cache[key] = out
        return out

    def _axis_table(self, key: str, j: int, nodes: np.ndarray, data: np.ndarray, order: int):
        diff = nodes[None, :] - data[:, None]
        if key == "c":
            return self._factor(key, j, diff, order)
        return self.kernel.profile(diff / self._bandwidths[key][j], order)

    def __repr__(self) -> str:
        return f"DensityEstimator(kind={self.kind!r}, n={self.n}, h={self.h.tolist()})"


def _dense_pairs(m: int, n: int):
    q_idx = np.repeat(np.arange(m), n)
    d_idx = np.tile(np.arange(n), m)
    return q_idx, d_idx


def fit(dataset, kernel: KernelSpec, bandwidth, kind: str = "plain", aux_bandwidth=None,
        prune: bool = True) -> DensityEstimator:
    """Fit a density estimator; no data are copied beyond a sorted index."""
    return DensityEstimator(dataset, kernel, bandwidth, kind, aux_bandwidth, prune)


def bias_term(dataset, kernel: KernelSpec, h, l, x) -> np.ndarray:
    """Plug-in leading bias ``1/2 mu2 sum_j h_j^2 d^2/dx_j^2 f_l(x)``."""
    ds = as_dataset(dataset)
    h = _positive_vector(h, ds.d, "h")
    est = DensityEstimator(ds, kernel, l, "plain")
    H = est.eval_hessian(x)
    diag = np.diagonal(H, axis1=-2, axis2=-1)
    return 0.5 * constants(kernel).mu2 * np.sum(h**2 * diag, axis=-1)


def bootstrap_mean_eval(dataset, kernel: KernelSpec, h, g, x) -> np.ndarray:
    """Exact smoothed-bootstrap mean ``E* f*(x)`` via convolved profiles."""
    return DensityEstimator(dataset, kernel, h, "bootstrap_mean", g).eval(x)


def sample_smoothed(dataset, kernel: KernelSpec, g, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` points from the KDE with bandwidth ``g``.

    Each draw is a uniformly chosen observation plus ``g * eps`` with ``eps``
    drawn per axis from the kernel profile by inverse-CDF lookup.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    pts = as_dataset(dataset).points
    n, d = pts.shape
    g = _positive_vector(g, d, "g")
    idx = rng.integers(0, n, size=count)
    cdf, u = inverse_cdf_table(kernel)
    eps = np.interp(rng.random((count, d)), cdf, u)
    return pts[idx] + g * eps


def sample_standard(dataset, count: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial resample of the observations."""
    if count <= 0:
        raise ValueError("count must be positive")
    pts = as_dataset(dataset).points
    return pts[rng.integers(0, len(pts), size=count)]
