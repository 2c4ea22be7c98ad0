"""True bivariate densities used in the coverage simulations.

Both families are mixtures of axis-aligned Gaussians, so the pdf, its
gradient, and its convolution with a product kernel all factor by axis.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .geometry import Contour, GridSpec, extract_contour, equispaced_points
from .kernel import KernelSpec

__all__ = [
    "GaussianProductMixture",
    "Elliptic",
    "Mixture",
    "SmoothedModel",
    "CasePreset",
    "PRESETS",
    "get_preset",
    "level_of_probability",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _phi(t, sd, order=0):
    z = t / sd
    base = np.exp(-0.5 * z * z) / (_SQRT2PI * sd)
    if order == 0:
        return base
    if order == 1:
        return -z / sd * base
    raise ValueError("only first derivatives are needed")


class GaussianProductMixture:
    """``sum_k w_k prod_j N(x_j; mu_kj, sd_kj^2)``.

    Evaluators accept ``(..., 2)`` arrays.  Subclasses only fix the
    parameters; everything else (pdf, gradient, sampling, smoothed version,
    true contour) is shared.
    """

    dim = 2

    def __init__(self, weights, means, sds, name: str = ""):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.sds = np.atleast_2d(np.asarray(sds, dtype=float))
        if not np.isclose(self.weights.sum(), 1.0) or np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(self.sds <= 0):
            raise ValueError("standard deviations must be positive")
        self.name = name

    # 1-D factor of component k on axis j; overridden by the smoothed model.
    def _axis(self, k: int, j: int, t, order: int = 0):
        return _phi(t - self.means[k, j], self.sds[k, j], order)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for k, w in enumerate(self.weights):
            out = out + w * self._axis(k, 0, x[..., 0]) * self._axis(k, 1, x[..., 1])
        return out

    def grad_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for k, w in enumerate(self.weights):
            f0, f1 = self._axis(k, 0, x[..., 0]), self._axis(k, 1, x[..., 1])
            out[..., 0] += w * self._axis(k, 0, x[..., 0], 1) * f1
            out[..., 1] += w * f0 * self._axis(k, 1, x[..., 1], 1)
        return out

    __call__ = pdf
    grad = grad_pdf

    def value_and_grad(self, x):
        return self.pdf(x), self.grad_pdf(x)

    def on_grid(self, axes) -> np.ndarray:
        ax, ay = (np.asarray(a, dtype=float) for a in axes)
        out = np.zeros((len(ax), len(ay)))
        for k, w in enumerate(self.weights):
            out += w * np.outer(self._axis(k, 0, ax), self._axis(k, 1, ay))
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` independent draws: component by weight, then a Gaussian."""
        if n < 1:
            raise ValueError("sample size must be positive")
        if len(self.weights) == 1:
            comp = np.zeros(n, dtype=int)
        else:
            comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, 2))
        return self.means[comp] + self.sds[comp] * z

    # ---------------------------------------------------------------- levels
    def modes(self) -> list[tuple[np.ndarray, float]]:
        """Local maxima found by ascent from every component mean."""
        found = []
        for mu in self.means:
            res = optimize.minimize(lambda p: -float(self.pdf(p)), mu,
                                    jac=lambda p: -self.grad_pdf(p), method="BFGS",
                                    options={"gtol": 1e-12})
            p = res.x
            if not any(np.linalg.norm(p - q) < 1e-5 for q, _ in found):
                found.append((p, float(self.pdf(p))))
        return found

    @functools.cached_property
    def max_pdf(self) -> float:
        return max(v for _, v in self.modes())

    def bounding_box(self, spread: float = 7.0) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min(self.means - spread * self.sds, axis=0)
        hi = np.max(self.means + spread * self.sds, axis=0)
        return lo, hi

    def true_contour(self, c: float, n_points: int = 1024, resolution: int = 1024) -> Contour:
        """The level-``c`` contour as a closed polyline of ``n_points`` vertices
        spaced evenly by arclength (marching squares on a fine grid)."""
        if not c < self.max_pdf:
            raise ValueError(f"level {c} is not below the maximum density {self.max_pdf:.6g}")
        lo, hi = self.bounding_box()
        ct = extract_contour(self, GridSpec(tuple(lo), tuple(hi), resolution), c)
        return equispaced_points(ct, n_points)

    def smoothed(self, kernel: KernelSpec, h) -> "SmoothedModel":
        """``f * K_h``: the expectation of the kernel estimator at bandwidth ``h``."""
        return SmoothedModel(self, kernel, h)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"


class Elliptic(GaussianProductMixture):
    """``f(x, y) = exp(-(a^2 x^2 + y^2 / a^2) / 2) / (2 pi)``."""

    def __init__(self, a: float):
        if not a > 0:
            raise ValueError("a must be positive")
        self.a = float(a)
        super().__init__([1.0], [[0.0, 0.0]], [[1.0 / a, a]], name=f"a={a:g}")

    @property
    def max_pdf(self) -> float:
        return 1.0 / (2.0 * math.pi)

    def level_of_probability(self, p: float) -> float:
        """Level whose superlevel set carries probability ``p``: ``(1-p)/(2 pi)``."""
        if not 0 < p < 1:
            raise ValueError("p must lie in (0, 1)")
        return (1.0 - p) / (2.0 * math.pi)

    def radius(self, c: float) -> float:
        """``r0`` with ``a^2 x^2 + y^2/a^2 = r0^2`` on the level-``c`` contour."""
        if not 0 < c < self.max_pdf:
            raise ValueError(f"level {c} must lie in (0, {self.max_pdf:.6g})")
        return math.sqrt(-2.0 * math.log(2.0 * math.pi * c))

    def true_contour(self, c: float, n_points: int = 1024, resolution: int = 1024) -> Contour:
        """Analytic ellipse ``(r0 cos t / a, a r0 sin t)``."""
        r0 = self.radius(c)
        t = 2.0 * math.pi * np.arange(n_points) / n_points
        pts = np.column_stack([r0 * np.cos(t) / self.a, self.a * r0 * np.sin(t)])
        return Contour(level=c, dim=2, components=[pts], closed=[True], field_fn=self)


class Mixture(GaussianProductMixture):
    """``0.5 N((-2, 2), 1.5 I) + 0.5 N((1, -1), 0.5 I)``."""

    def __init__(self):
        super().__init__([0.5, 0.5], [[-2.0, 2.0], [1.0, -1.0]],
                         [[math.sqrt(1.5)] * 2, [math.sqrt(0.5)] * 2], name="two-component")


def level_of_probability(model, p: float) -> float:
    if not isinstance(model, Elliptic):
        raise TypeError("level_of_probability is defined for the elliptic family only")
    return model.level_of_probability(p)


# Gauss-Legendre on the kernel support; the integrand is a polynomial times a
# Gaussian, so 96 nodes are accurate to rounding for bandwidths up to a few sds.
_GL_NODES = 96


class SmoothedModel(GaussianProductMixture):
    """The model density convolved with the product kernel ``K_h``.

    Each axis factor ``(phi_sd * k_h)(t) = int k(v) phi_sd(t - h v) dv`` is
    evaluated by Gauss-Legendre quadrature over ``[-1, 1]``.
    """

    def __init__(self, base: GaussianProductMixture, kernel: KernelSpec, h):
        self.base = base
        self.kernel = kernel
        self.h = np.broadcast_to(np.asarray(h, dtype=float), (2,)).copy()
        if np.any(self.h <= 0):
            raise ValueError("bandwidth must be positive")
        super().__init__(base.weights, base.means, base.sds, name=f"{base.name} * K_h")
        v, w = np.polynomial.legendre.leggauss(_GL_NODES)
        self._v = v
        self._w = w * kernel.profile(v)

    def _axis(self, k, j, t, order=0):
        t = np.asarray(t, dtype=float)
        shifted = t[..., None] - self.means[k, j] - self.h[j] * self._v
        return _phi(shifted, self.sds[k, j], order) @ self._w

    @functools.cached_property
    def max_pdf(self) -> float:
        return max(v for _, v in self.modes())


@dataclass(frozen=True)
class CasePreset:
    """A simulation case: model plus target level."""

    name: str
    model: GaussianProductMixture
    level: float
    description: str


def _presets() -> dict[str, CasePreset]:
    e1, e2 = Elliptic(1.0), Elliptic(2.0)
    return {
        "case1": CasePreset("case1", e1, e1.level_of_probability(0.5), "elliptic a=1, p=0.5"),
        "case2": CasePreset("case2", e2, e2.level_of_probability(0.5), "elliptic a=2, p=0.5"),
        "case3": CasePreset("case3", e1, e1.level_of_probability(0.95), "elliptic a=1, p=0.95"),
        "case4": CasePreset("case4", Mixture(), 0.048, "two-component normal mixture, c=0.048"),
    }


PRESETS = _presets()


def get_preset(name: str) -> CasePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown case {name!r}; known: {sorted(PRESETS)}") from None
