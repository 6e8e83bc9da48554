"""The Kac kernel and exact integrals of its powers and pair overlaps.

The unscaled profile is ``J(u) = C_d (1 - |u|^2)^3`` for ``|u| < 1``; the
scaled kernel is ``J_gamma(r, r') = gamma^d J(gamma (r - r'))``.  ``C_d`` makes
the kernel integrate to one in every dimension.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import beta as beta_fn

from .params import ModelParams

KERNEL_CONSTANTS = {
    1: 35.0 / 32.0,
    2: 4.0 / math.pi,
    3: 315.0 / (64.0 * math.pi),
}

KERNEL_ID = "poly6-c2"


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def kernel_constant(d: int) -> float:
    return KERNEL_CONSTANTS[d]


def kernel_of_distance(dist, gamma: float, d: int):
    """Scaled kernel as a function of the distance ``|r - r'|`` (vectorized)."""
    t = np.asarray(dist, dtype=float) * gamma
    base = np.clip(1.0 - t * t, 0.0, None)
    return gamma**d * KERNEL_CONSTANTS[d] * base**3


def kac_kernel(r, r_prime, params: ModelParams, side=None) -> float:
    """Kernel value ``J_gamma(r, r')``.

    ``side`` switches on minimum-image distances for a periodic domain.
    """
    diff = np.asarray(r, dtype=float) - np.asarray(r_prime, dtype=float)
    if side is not None:
        side = np.broadcast_to(np.asarray(side, dtype=float), diff.shape)
        diff = diff - side * np.round(diff / side)
    dist = float(np.sqrt(np.sum(diff * diff)))
    return float(kernel_of_distance(dist, params.gamma, params.d))


def kernel_power_integral(n: int, gamma: float, d: int) -> float:
    """Exact value of ``int J_gamma(r)^n dr``.

    Radially, ``int_0^1 u^{d-1} (1-u^2)^{3n} du = B(d/2, 3n+1) / 2``.
    """
    radial = 0.5 * beta_fn(d / 2.0, 3 * n + 1)
    return gamma ** (d * (n - 1)) * KERNEL_CONSTANTS[d] ** n * sphere_area(d) * radial


@lru_cache(maxsize=None)
def _gl(n: int):
    return np.polynomial.legendre.leggauss(n)


def _unit_pair_overlap(t: float, d: int, n_outer: int = 96) -> float:
    """Overlap ``int J(u) J(u - t e_1) du`` of the unscaled profile, ``t >= 0``."""
    if t >= 2.0:
        return 0.0
    c2 = KERNEL_CONSTANTS[d] ** 2
    xs, ws = _gl(8)  # inner integrand is a degree-12 polynomial in x: exact

    def axial(rho2: float) -> float:
        half = math.sqrt(max(1.0 - rho2, 0.0))
        lo, hi = t - half, half
        if hi <= lo:
            return 0.0
        x = 0.5 * (hi - lo) * xs + 0.5 * (hi + lo)
        f = (1.0 - x * x - rho2) ** 3 * (1.0 - (x - t) ** 2 - rho2) ** 3
        return 0.5 * (hi - lo) * float(np.dot(ws, f))

    if d == 1:
        return c2 * axial(0.0)
    rho_max = math.sqrt(max(1.0 - 0.25 * t * t, 0.0))
    ys, wy = _gl(n_outer)
    rho = 0.5 * rho_max * (ys + 1.0)
    vals = np.array([axial(r * r) for r in rho])
    if d == 2:
        # perpendicular line: both signs of rho
        return c2 * 2.0 * 0.5 * rho_max * float(np.dot(wy, vals))
    return c2 * 2.0 * math.pi * 0.5 * rho_max * float(np.dot(wy, vals * rho))


def pair_overlap(dist, gamma: float, d: int) -> np.ndarray | float:
    """Two-body potential ``J^(2)(q1, q2) = int J_gamma(r-q1) J_gamma(r-q2) dr``.

    Depends only on ``s = |q1 - q2|``: ``J^(2) = gamma^d j2(gamma s)``.  The
    axial integral is exact; the perpendicular one uses 96-point Gauss-Legendre.
    """
    arr = np.atleast_1d(np.asarray(dist, dtype=float))
    out = np.array([gamma**d * _unit_pair_overlap(gamma * s, d) for s in arr.ravel()])
    out = out.reshape(arr.shape)
    return float(out[0]) if np.ndim(dist) == 0 else out


def kernel_gradient_bound(gamma: float, d: int) -> float:
    """Lipschitz constant of ``J_gamma`` in its argument.

    ``|d/du (1-u^2)^3| = 6u(1-u^2)^2`` peaks at ``u = 1/sqrt(5)``.
    """
    u = 1.0 / math.sqrt(5.0)
    return gamma ** (d + 1) * KERNEL_CONSTANTS[d] * 6.0 * u * (1.0 - u * u) ** 2
