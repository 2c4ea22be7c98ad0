"""Extreme-value quantiles for the large-sample vertical confidence region.

For ``d >= 2`` the sup of the standardized estimation error over the contour
behaves like the maximum of a Gaussian field indexed by a ``(d-1)``-manifold,
whose Gumbel-type quantile depends on the contour's surface measure.  For
``d = 1`` the contour is a finite set of points and the quantile is that of
a maximum of independent normals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.stats import norm

from .geometry import Contour, GridSpec, extract_contour
from .kernel import KernelConstants, constants
from .regions import RegionPair, VerticalRegion, vertical_pair

__all__ = [
    "EvtInputs",
    "BandwidthTooLargeError",
    "z_of_alpha",
    "gaussian_field_max_quantile",
    "b_hat",
    "a_hat",
    "build_cn1",
]


class BandwidthTooLargeError(ValueError):
    """The extreme-value quantile needs ``h < 1`` (``log(1/h) > 0``)."""


def z_of_alpha(alpha: float) -> float:
    """``z(alpha) = -log(-log(1 - alpha) / 2)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return -math.log(-0.5 * math.log1p(-alpha))


@dataclass(frozen=True)
class EvtInputs:
    """Everything the extreme-value quantile depends on.

    ``surface_measure`` is the estimated contour length/area (``d >= 2``);
    ``n_hat`` is the number of contour points (``d = 1``).
    """

    d: int
    n: int
    h_eff: float
    alpha: float
    c: float
    kconst: KernelConstants
    surface_measure: float | None = None
    n_hat: int | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.d < 1 or self.n < 1 or not self.h_eff > 0 or not self.c > 0:
            raise ValueError("d, n, h_eff and c must be positive")
        if self.d >= 2:
            if self.surface_measure is None or not self.surface_measure > 0:
                raise ValueError("surface_measure must be positive for d >= 2")
        elif self.n_hat is None or self.n_hat < 1:
            raise ValueError("n_hat must be at least 1 for d = 1")


def gaussian_field_max_quantile(z: float, r: int, h: float, integral: float) -> float:
    """Gumbel-scale threshold for the sup of a smooth Gaussian field on an
    ``r``-dimensional manifold; ``integral`` is the manifold's weighted measure."""
    if not 0 < h < 1:
        raise BandwidthTooLargeError(f"bandwidth h={h:.6g} must be below 1")
    L = math.log(1.0 / h)
    root = math.sqrt(2.0 * r * L)
    const = (2.0 * r) ** (r / 2 - 0.5) / (math.sqrt(2.0) * math.pi ** ((r + 1) / 2))
    return root + (z + (r / 2 - 0.5) * math.log(L) + math.log(const * integral)) / root


def b_hat(inp: EvtInputs) -> float:
    """Extreme-value quantile ``b(alpha)`` for ``d >= 2``."""
    d = inp.d
    if d < 2:
        raise ValueError("b_hat is defined for d >= 2")
    if not inp.h_eff < 1:
        raise BandwidthTooLargeError(
            f"the extreme-value region requires h < 1, got h_eff={inp.h_eff:.6g}")
    L = math.log(1.0 / inp.h_eff)
    root = math.sqrt(2.0 * (d - 1) * L)
    s_k = math.sqrt(inp.kconst.s_k_sq)
    log_term = math.log((2 * d - 2) ** (d / 2 - 1) * s_k ** (d - 1) * inp.surface_measure
                        / (math.sqrt(2.0) * math.pi ** (d / 2)))
    return root + (z_of_alpha(inp.alpha) + (d / 2 - 1) * math.log(L) + log_term) / root


def a_hat(inp: EvtInputs) -> float:
    """Half-width of the vertical band ``[c - a, c + a]``."""
    scale = math.sqrt(inp.kconst.l2_norm_sq * inp.c / (inp.n * inp.h_eff**inp.d))
    if inp.d == 1:
        return norm.ppf((1.0 - inp.alpha) ** (1.0 / inp.n_hat)) * scale
    return b_hat(inp) * scale


def build_cn1(bc_estimator, grid: GridSpec, c: float, alpha: float,
              contour: Contour | None = None) -> tuple[VerticalRegion, RegionPair, float]:
    """Large-sample region for the contour and the superlevel-set pair.

    Returns the vertical band on the bias-corrected estimator, the nested pair
    ``({f >= c - a}, {f >= c + a})`` and the half-width ``a``.
    """
    ct = contour if contour is not None else extract_contour(bc_estimator, grid, c)
    if ct.empty:
        raise ValueError(f"the estimate has no level-{c:g} crossing on the grid")
    d = bc_estimator.d
    h_eff = float(math.exp(sum(math.log(v) for v in bc_estimator.h) / d))
    kc = constants(bc_estimator.kernel)
    if d == 1:
        inp = EvtInputs(d, bc_estimator.n, h_eff, alpha, c, kc, n_hat=ct.n_hat)
    else:
        inp = EvtInputs(d, bc_estimator.n, h_eff, alpha, c, kc, surface_measure=ct.total_length)
    a = a_hat(inp)
    return VerticalRegion(bc_estimator, c - a, c + a), vertical_pair(bc_estimator, c, a), a
