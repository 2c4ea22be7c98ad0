"""Product smoothing kernels with compact support on [-1, 1]^d.

Every kernel here has the form ``K(u) = prod_j k(u_j)`` where the per-axis
profile is ``k(u) = C (1 - u^2)^p`` on ``[-1, 1]``.  The simulation kernel is
``p = 5`` with ``C = 693/512``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate

__all__ = [
    "KernelSpec",
    "KernelConstants",
    "ConvolvedProfile",
    "product_kernel",
    "get_kernel",
    "KERNELS",
    "constants",
    "convolved_profile",
]

_QUAD_TOL = 1e-9


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


def _profile_coefficients(power: int) -> tuple[float, ...]:
    # (1 - u^2)^p expanded in ascending powers of u, then normalized exactly.
    coef = [Fraction(0)] * (2 * power + 1)
    for i in range(power + 1):
        coef[2 * i] = Fraction(math.comb(power, i) * (-1) ** i)
    mass = sum(c * Fraction(2, k + 1) for k, c in enumerate(coef) if k % 2 == 0)
    return tuple(float(c / mass) for c in coef)


@dataclass(frozen=True)
class KernelSpec:
    """Product kernel ``K(u) = prod_j k(u_j)`` with ``k(u) = C (1-u^2)^power``.

    Immutable; safe to share across threads.
    """

    dimension: int
    power: int = 5
    name: str = ""
    coefficients: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("kernel dimension must be positive")
        if self.power < 1:
            raise ValueError("profile power must be positive")
        object.__setattr__(self, "coefficients", _profile_coefficients(self.power))

    support_radius = 1.0

    @property
    def normalizer(self) -> float:
        """The constant ``C`` in front of ``(1 - u^2)^power``."""
        return self.coefficients[0]

    def profile(self, u, order: int = 0) -> np.ndarray:
        """Per-axis profile ``k`` (or its ``order``-th derivative), zero outside [-1, 1]."""
        u = np.asarray(u, dtype=float)
        if order == 0:
            t = np.clip(1.0 - u * u, 0.0, None)
            return self.normalizer * t**self.power
        coef = _derivative_coefficients(self.coefficients, order)
        out = P.polyval(u, coef) if len(coef) else np.zeros_like(u)
        return np.where(np.abs(u) <= 1.0, out, 0.0)

    def _check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dimension:
            raise ValueError(
                f"expected points of dimension {self.dimension}, got shape {u.shape}"
            )
        return u

    def eval(self, u) -> np.ndarray:
        """Kernel value at ``u`` (shape ``(..., d)``)."""
        u = self._check(u)
        return np.prod(self.profile(u), axis=-1)

    def grad(self, u) -> np.ndarray:
        u = self._check(u)
        k0 = self.profile(u)
        k1 = self.profile(u, 1)
        d = self.dimension
        out = np.empty(u.shape, dtype=float)
        for a in range(d):
            term = k1[..., a]
            for j in range(d):
                if j != a:
                    term = term * k0[..., j]
            out[..., a] = term
        return out

    def hessian(self, u) -> np.ndarray:
        u = self._check(u)
        d = self.dimension
        ks = [self.profile(u, r) for r in range(3)]
        out = np.empty(u.shape + (d,), dtype=float)
        for a in range(d):
            for b in range(a, d):
                orders = [0] * d
                orders[a] += 1
                orders[b] += 1
                term = np.ones(u.shape[:-1])
                for j in range(d):
                    term = term * ks[orders[j]][..., j]
                out[..., a, b] = term
                out[..., b, a] = term
        return out

    def __call__(self, u) -> np.ndarray:
        return self.eval(u)


@functools.lru_cache(maxsize=None)
def _derivative_coefficients(coef: tuple[float, ...], order: int) -> np.ndarray:
    c = np.asarray(coef, dtype=float)
    if order:
        c = P.polyder(c, order)
    return c


def product_kernel(dimension: int, power: int = 5) -> KernelSpec:
    return KernelSpec(dimension, power, name=f"poly{power}_{dimension}d")


KERNELS = {
    "sim1d": KernelSpec(1, 5, name="sim1d"),
    "sim2d": KernelSpec(2, 5, name="sim2d"),
}


def get_kernel(name: str) -> KernelSpec:
    try:
        return KERNELS[name]
    except KeyError:
        raise KeyError(f"unknown kernel {name!r}; known: {sorted(KERNELS)}") from None


@dataclass(frozen=True)
class KernelConstants:
    """Scalar kernel integrals used by quantile and bandwidth formulas.

    Attributes
    ----------
    l2_norm_sq : float
        ``int K(u)^2 du`` over ``R^d``.
    deriv_l2_norm_sq : float
        ``int (dK/du_1)^2 du``.
    s_k_sq : float
        ``deriv_l2_norm_sq / (2 l2_norm_sq)``.
    mu2 : float
        ``int u_1^2 K(u) du``.
    integral : float
        ``int K(u) du`` (a normalization check, should be 1).
    """

    l2_norm_sq: float
    deriv_l2_norm_sq: float
    s_k_sq: float
    mu2: float
    integral: float = 1.0

    def as_rows(self) -> list[tuple[str, float]]:
        return [
            ("integral", self.integral),
            ("l2_norm_sq", self.l2_norm_sq),
            ("deriv_l2_norm_sq", self.deriv_l2_norm_sq),
            ("s_k_sq", self.s_k_sq),
            ("mu2", self.mu2),
        ]


def profile_integral(kernel: KernelSpec, fn) -> float:
    """Adaptive quadrature of ``fn(u)`` over the profile support [-1, 1]."""
    value, err = integrate.quad(fn, -1.0, 1.0, epsabs=_QUAD_TOL, epsrel=1e-12, limit=200)
    if not np.isfinite(value) or err > _QUAD_TOL:
        raise QuadratureError(f"quadrature error estimate {err:.3g} exceeds {_QUAD_TOL}")
    return value


@functools.lru_cache(maxsize=None)
def constants(kernel: KernelSpec) -> KernelConstants:
    """Kernel constants, computed once per kernel by adaptive quadrature.

    The product form reduces every d-dimensional integral to powers of
    one-dimensional ones.
    """
    k = kernel.profile
    d = kernel.dimension
    mass = profile_integral(kernel, lambda u: float(k(u)))
    r0 = profile_integral(kernel, lambda u: float(k(u)) ** 2)
    r1 = profile_integral(kernel, lambda u: float(k(u, 1)) ** 2)
    m2 = profile_integral(kernel, lambda u: u * u * float(k(u)))
    l2 = r0**d
    dl2 = r1 * r0 ** (d - 1)
    return KernelConstants(
        l2_norm_sq=l2,
        deriv_l2_norm_sq=dl2,
        s_k_sq=dl2 / (2.0 * l2),
        mu2=m2 * mass ** (d - 1),
        integral=mass**d,
    )


# Gauss-Legendre nodes exact for the piecewise-polynomial convolution integrand
# (degree <= 4 * power + 1).
@functools.lru_cache(maxsize=None)
def _gl_nodes(count: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(count)


class ConvolvedProfile:
    """Tabulated density of ``h U + g V`` with ``U, V`` i.i.d. from the profile.

    This is the per-axis factor of ``K_h * K_g``.  Exact values and slopes
    are tabulated on a dense grid and joined by cubic Hermite pieces, so
    :meth:`derivative` is the exact derivative of :meth:`__call__`.  The
    function is even and vanishes for ``|t| >= h + g``.
    """

    def __init__(self, kernel: KernelSpec, h: float, g: float, knots: int = 4097):
        if not (h > 0 and g > 0):
            raise ValueError("bandwidths must be positive")
        if knots < 3:
            raise ValueError("need at least 3 knots")
        self.h = float(h)
        self.g = float(g)
        self.radius = self.h + self.g
        self.knots = np.linspace(-self.radius, self.radius, knots)
        self.step = self.knots[1] - self.knots[0]
        self.values = _convolve(kernel, self.h, self.g, self.knots, 0)
        self.slopes = _convolve(kernel, self.h, self.g, self.knots, 1)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        s = (t + self.radius) / self.step
        i = np.clip(np.floor(s).astype(np.intp), 0, len(self.knots) - 2)
        return t, i, s - i, np.abs(t) < self.radius

    def __call__(self, t) -> np.ndarray:
        t, i, x, inside = self._locate(t)
        x2 = x * x
        x3 = x2 * x
        v = ((2 * x3 - 3 * x2 + 1) * self.values[i] + (-2 * x3 + 3 * x2) * self.values[i + 1]
             + self.step * ((x3 - 2 * x2 + x) * self.slopes[i] + (x3 - x2) * self.slopes[i + 1]))
        return np.where(inside, v, 0.0)

    def derivative(self, t) -> np.ndarray:
        t, i, x, inside = self._locate(t)
        x2 = x * x
        v = ((6 * x2 - 6 * x) * (self.values[i] - self.values[i + 1]) / self.step
             + (3 * x2 - 4 * x + 1) * self.slopes[i] + (3 * x2 - 2 * x) * self.slopes[i + 1])
        return np.where(inside, v, 0.0)


def _convolve(kernel: KernelSpec, h: float, g: float, t: np.ndarray, order: int):
    # int k(v) * h^-(1+order) k^(order)((t - g v)/h) dv; the integrand is a
    # polynomial in v on the interval where |t - g v| <= h, so Gauss-Legendre
    # with enough nodes is exact there.
    lo = np.maximum(-1.0, (t - h) / g)
    hi = np.minimum(1.0, (t + h) / g)
    width = np.clip(hi - lo, 0.0, None)
    x, w = _gl_nodes(2 * kernel.power + 2)
    v = 0.5 * (hi + lo)[:, None] + 0.5 * width[:, None] * x[None, :]
    f = kernel.profile(v) * kernel.profile((t[:, None] - g * v) / h, order)
    out = 0.5 * width * (f @ w) / h ** (1 + order)
    return np.where(width > 0, out, 0.0)


def convolved_profile(kernel: KernelSpec, h: float, g: float, knots: int = 4097) -> ConvolvedProfile:
    return ConvolvedProfile(kernel, h, g, knots)


@functools.lru_cache(maxsize=None)
def inverse_cdf_table(kernel: KernelSpec, knots: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """(cdf values, abscissae) of the profile for inverse-CDF sampling."""
    u = np.linspace(-1.0, 1.0, knots)
    anti = P.polyint(np.asarray(kernel.coefficients))
    cdf = P.polyval(u, anti) - P.polyval(-1.0, anti)
    cdf[0], cdf[-1] = 0.0, 1.0
    return cdf, u
