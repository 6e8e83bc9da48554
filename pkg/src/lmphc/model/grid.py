"""Quadrature lattice for the smeared density and compiled stencil kernels.

Nodes sit at ``(k + 1/2) h`` for integer ``k`` on every axis, with ``h`` an
exact divisor of ``ell_minus``.  Every grid built for the same parameters is a
window onto this one global lattice, so small cubes contain the same number
of nodes at the same relative offsets.

Fields carry ``npow`` channels.  With one channel the value is the smeared
density ``rho``; with four channels the entries are the power sums
``p_k = sum_i J_i^k`` which give the distinct-index energy density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .domain import Domain
from .kernel import KERNEL_CONSTANTS
from .params import ModelParams


# ---------------------------------------------------------------------------
# compiled helpers
# ---------------------------------------------------------------------------
@nb.njit(cache=True, inline="always")
def _edens(p1, p2, p3, p4, npow):
    if npow == 1:
        r2 = p1 * p1
        return -0.5 * r2 + r2 * r2 / 24.0
    s2 = p1 * p1
    pair = s2 - p2
    quad = s2 * s2 - 6.0 * s2 * p2 + 3.0 * p2 * p2 + 8.0 * p1 * p3 - 6.0 * p4
    return -0.5 * pair + quad / 24.0


@nb.njit(cache=True)
def _axis_range(x, a, d, h, rc, lo, shape, periodic):
    """First/last global node index on axis ``a`` within ``rc`` of ``x``."""
    if a >= d:
        return 0, 0
    kmin = int(math.ceil((x - rc) / h - 0.5))
    kmax = int(math.floor((x + rc) / h - 0.5))
    if not periodic:
        if kmin < lo:
            kmin = lo
        if kmax > lo + shape - 1:
            kmax = lo + shape - 1
    return kmin, kmax


@nb.njit(cache=True, inline="always")
def _wrap(k, lo, n, periodic):
    i = k - lo
    if periodic:
        i = i % n
    return i


@nb.njit(cache=True)
def deposit(field, x, sign, lo, shape, periodic, h, gamma, cd, d):
    """Add ``sign * J(node - x)^k`` to channel ``k-1`` of ``field``."""
    npow = field.shape[0]
    rc = 1.0 / gamma
    amp = cd * gamma**d
    g2 = gamma * gamma
    k0a, k0b = _axis_range(x[0], 0, d, h, rc, lo[0], shape[0], periodic)
    k1a, k1b = _axis_range(x[1], 1, d, h, rc, lo[1], shape[1], periodic)
    k2a, k2b = _axis_range(x[2], 2, d, h, rc, lo[2], shape[2], periodic)
    for k0 in range(k0a, k0b + 1):
        dx = (k0 + 0.5) * h - x[0]
        i0 = _wrap(k0, lo[0], shape[0], periodic)
        for k1 in range(k1a, k1b + 1):
            dy = (k1 + 0.5) * h - x[1] if d > 1 else 0.0
            i1 = _wrap(k1, lo[1], shape[1], periodic) if d > 1 else 0
            for k2 in range(k2a, k2b + 1):
                dz = (k2 + 0.5) * h - x[2] if d > 2 else 0.0
                t2 = g2 * (dx * dx + dy * dy + dz * dz)
                if t2 >= 1.0:
                    continue
                i2 = _wrap(k2, lo[2], shape[2], periodic) if d > 2 else 0
                b = 1.0 - t2
                v = amp * b * b * b
                vk = v
                for c in range(npow):
                    field[c, i0, i1, i2] += sign * vk
                    vk *= v


@nb.njit(cache=True)
def delta_energy_add(field, x, sign, lo, shape, periodic, h, gamma, cd, d):
    """Quadrature of ``e(p + sign*v) - e(p)`` over the stencil of ``x``.

    Does not modify ``field``.  Returned value excludes the ``h^d`` weight.
    """
    npow = field.shape[0]
    rc = 1.0 / gamma
    amp = cd * gamma**d
    g2 = gamma * gamma
    total = 0.0
    k0a, k0b = _axis_range(x[0], 0, d, h, rc, lo[0], shape[0], periodic)
    k1a, k1b = _axis_range(x[1], 1, d, h, rc, lo[1], shape[1], periodic)
    k2a, k2b = _axis_range(x[2], 2, d, h, rc, lo[2], shape[2], periodic)
    for k0 in range(k0a, k0b + 1):
        dx = (k0 + 0.5) * h - x[0]
        i0 = _wrap(k0, lo[0], shape[0], periodic)
        for k1 in range(k1a, k1b + 1):
            dy = (k1 + 0.5) * h - x[1] if d > 1 else 0.0
            i1 = _wrap(k1, lo[1], shape[1], periodic) if d > 1 else 0
            for k2 in range(k2a, k2b + 1):
                dz = (k2 + 0.5) * h - x[2] if d > 2 else 0.0
                t2 = g2 * (dx * dx + dy * dy + dz * dz)
                if t2 >= 1.0:
                    continue
                i2 = _wrap(k2, lo[2], shape[2], periodic) if d > 2 else 0
                b = 1.0 - t2
                v = amp * b * b * b
                p1 = field[0, i0, i1, i2]
                if npow == 1:
                    total += _edens(p1 + sign * v, 0.0, 0.0, 0.0, 1) - _edens(p1, 0.0, 0.0, 0.0, 1)
                else:
                    p2 = field[1, i0, i1, i2]
                    p3 = field[2, i0, i1, i2]
                    p4 = field[3, i0, i1, i2]
                    v2 = v * v
                    total += _edens(p1 + sign * v, p2 + sign * v2, p3 + sign * v2 * v,
                                    p4 + sign * v2 * v2, 4) - _edens(p1, p2, p3, p4, 4)
    return total


@nb.njit(cache=True)
def delta_energy_move(field, xo, xn, lo, shape, periodic, h, gamma, cd, d):
    """Energy change for moving one particle from ``xo`` to ``xn``.

    First the particle is removed, then inserted into the reduced field whose
    node values are recomputed on the fly; ``field`` is left untouched.
    """
    npow = field.shape[0]
    rc = 1.0 / gamma
    amp = cd * gamma**d
    g2 = gamma * gamma
    total = delta_energy_add(field, xo, -1.0, lo, shape, periodic, h, gamma, cd, d)
    side0 = shape[0] * h
    side1 = shape[1] * h
    side2 = shape[2] * h
    k0a, k0b = _axis_range(xn[0], 0, d, h, rc, lo[0], shape[0], periodic)
    k1a, k1b = _axis_range(xn[1], 1, d, h, rc, lo[1], shape[1], periodic)
    k2a, k2b = _axis_range(xn[2], 2, d, h, rc, lo[2], shape[2], periodic)
    for k0 in range(k0a, k0b + 1):
        cx = (k0 + 0.5) * h
        dx = cx - xn[0]
        ox = cx - xo[0]
        if periodic:
            ox -= side0 * math.floor(ox / side0 + 0.5)
        i0 = _wrap(k0, lo[0], shape[0], periodic)
        for k1 in range(k1a, k1b + 1):
            dy = 0.0
            oy = 0.0
            i1 = 0
            if d > 1:
                cy = (k1 + 0.5) * h
                dy = cy - xn[1]
                oy = cy - xo[1]
                if periodic:
                    oy -= side1 * math.floor(oy / side1 + 0.5)
                i1 = _wrap(k1, lo[1], shape[1], periodic)
            for k2 in range(k2a, k2b + 1):
                dz = 0.0
                oz = 0.0
                i2 = 0
                if d > 2:
                    cz = (k2 + 0.5) * h
                    dz = cz - xn[2]
                    oz = cz - xo[2]
                    if periodic:
                        oz -= side2 * math.floor(oz / side2 + 0.5)
                    i2 = _wrap(k2, lo[2], shape[2], periodic)
                t2 = g2 * (dx * dx + dy * dy + dz * dz)
                if t2 >= 1.0:
                    continue
                b = 1.0 - t2
                v = amp * b * b * b
                to2 = g2 * (ox * ox + oy * oy + oz * oz)
                w = 0.0
                if to2 < 1.0:
                    bo = 1.0 - to2
                    w = amp * bo * bo * bo
                p1 = field[0, i0, i1, i2]
                if npow == 1:
                    r = p1 - w
                    total += _edens(r + v, 0.0, 0.0, 0.0, 1) - _edens(r, 0.0, 0.0, 0.0, 1)
                else:
                    w2 = w * w
                    q1 = p1 - w
                    q2 = field[1, i0, i1, i2] - w2
                    q3 = field[2, i0, i1, i2] - w2 * w
                    q4 = field[3, i0, i1, i2] - w2 * w2
                    v2 = v * v
                    total += _edens(q1 + v, q2 + v2, q3 + v2 * v, q4 + v2 * v2, 4) - _edens(
                        q1, q2, q3, q4, 4)
    return total


@nb.njit(cache=True)
def field_energy(field):
    """Sum of the energy density over all nodes (without the ``h^d`` weight)."""
    npow = field.shape[0]
    total = 0.0
    n0, n1, n2 = field.shape[1], field.shape[2], field.shape[3]
    for i0 in range(n0):
        for i1 in range(n1):
            for i2 in range(n2):
                if npow == 1:
                    total += _edens(field[0, i0, i1, i2], 0.0, 0.0, 0.0, 1)
                else:
                    total += _edens(field[0, i0, i1, i2], field[1, i0, i1, i2],
                                    field[2, i0, i1, i2], field[3, i0, i1, i2], 4)
    return total


@nb.njit(cache=True)
def relative_field_energy(base, extra):
    """Sum of ``e(base + extra) - e(base)`` over nodes where ``extra`` is nonzero."""
    npow = base.shape[0]
    total = 0.0
    n0, n1, n2 = base.shape[1], base.shape[2], base.shape[3]
    for i0 in range(n0):
        for i1 in range(n1):
            for i2 in range(n2):
                if extra[0, i0, i1, i2] == 0.0:
                    continue
                if npow == 1:
                    b1 = base[0, i0, i1, i2]
                    total += _edens(b1 + extra[0, i0, i1, i2], 0.0, 0.0, 0.0, 1) - _edens(
                        b1, 0.0, 0.0, 0.0, 1)
                else:
                    b1 = base[0, i0, i1, i2]
                    b2 = base[1, i0, i1, i2]
                    b3 = base[2, i0, i1, i2]
                    b4 = base[3, i0, i1, i2]
                    total += _edens(b1 + extra[0, i0, i1, i2], b2 + extra[1, i0, i1, i2],
                                    b3 + extra[2, i0, i1, i2], b4 + extra[3, i0, i1, i2],
                                    4) - _edens(b1, b2, b3, b4, 4)
    return total


@nb.njit(cache=True)
def stencil_values(x, lo, shape, periodic, h, gamma, cd, d, out_idx, out_val):
    """Write flat node indices and kernel values of the stencil of ``x``.

    Returns the number of entries written.
    """
    rc = 1.0 / gamma
    amp = cd * gamma**d
    g2 = gamma * gamma
    n = 0
    k0a, k0b = _axis_range(x[0], 0, d, h, rc, lo[0], shape[0], periodic)
    k1a, k1b = _axis_range(x[1], 1, d, h, rc, lo[1], shape[1], periodic)
    k2a, k2b = _axis_range(x[2], 2, d, h, rc, lo[2], shape[2], periodic)
    for k0 in range(k0a, k0b + 1):
        dx = (k0 + 0.5) * h - x[0]
        i0 = _wrap(k0, lo[0], shape[0], periodic)
        for k1 in range(k1a, k1b + 1):
            dy = (k1 + 0.5) * h - x[1] if d > 1 else 0.0
            i1 = _wrap(k1, lo[1], shape[1], periodic) if d > 1 else 0
            for k2 in range(k2a, k2b + 1):
                dz = (k2 + 0.5) * h - x[2] if d > 2 else 0.0
                t2 = g2 * (dx * dx + dy * dy + dz * dz)
                if t2 >= 1.0:
                    continue
                i2 = _wrap(k2, lo[2], shape[2], periodic) if d > 2 else 0
                b = 1.0 - t2
                out_idx[n] = (i0 * shape[1] + i1) * shape[2] + i2
                out_val[n] = amp * b * b * b
                n += 1
    return n


# ---------------------------------------------------------------------------
# Python-facing grid object
# ---------------------------------------------------------------------------
def pad3(x) -> np.ndarray:
    """Embed a point of dimension <= 3 into a length-3 float array."""
    out = np.zeros(3)
    x = np.asarray(x, dtype=float).ravel()
    out[: len(x)] = x
    return out


@dataclass(frozen=True)
class QuadratureGrid:
    """A window ``lo .. lo+shape-1`` of the global node lattice."""

    d: int
    h: float
    gamma: float
    lo: np.ndarray
    shape: np.ndarray
    periodic: bool

    @property
    def weight(self) -> float:
        return self.h**self.d

    @property
    def cd(self) -> float:
        return KERNEL_CONSTANTS[self.d]

    @property
    def stencil_size(self) -> int:
        return (2 * int(math.ceil(1.0 / (self.gamma * self.h))) + 2) ** self.d

    def args(self):
        return (self.lo, self.shape, self.periodic, self.h, self.gamma, self.cd, self.d)

    def empty_field(self, npow: int = 1) -> np.ndarray:
        return np.zeros((npow, *self.shape.tolist()))

    def node_coords(self, axis: int) -> np.ndarray:
        return (np.arange(self.lo[axis], self.lo[axis] + self.shape[axis]) + 0.5) * self.h

    @classmethod
    def for_domain(cls, params: ModelParams, domain: Domain, margin: float | None = None):
        """Grid covering the domain; boxes get ``margin`` (default ``1/gamma``) of padding."""
        h = params.grid_spacing
        n_in = int(round(domain.side / h))
        lo = np.zeros(3, np.int64)
        shape = np.ones(3, np.int64)
        if domain.periodic:
            shape[: params.d] = n_in
            if domain.side <= 2.0 / params.gamma:
                raise ValueError("torus side must exceed twice the Kac range")
        else:
            reach = 1.0 / params.gamma if margin is None else margin
            m = int(math.ceil(reach / h)) + 1
            lo[: params.d] = -m
            shape[: params.d] = n_in + 2 * m
        return cls(params.d, h, params.gamma, lo, shape, domain.periodic)

    @classmethod
    def covering(cls, params: ModelParams, points: np.ndarray, extra: float = 0.0):
        """Non-periodic grid covering every node within ``1/gamma`` of ``points``."""
        h = params.grid_spacing
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        reach = 1.0 / params.gamma + extra
        lo = np.zeros(3, np.int64)
        shape = np.ones(3, np.int64)
        if len(pts):
            a = np.floor((pts.min(axis=0) - reach) / h - 0.5).astype(np.int64) - 1
            b = np.ceil((pts.max(axis=0) + reach) / h - 0.5).astype(np.int64) + 1
            lo[: params.d] = a
            shape[: params.d] = b - a + 1
        return cls(params.d, h, params.gamma, lo, shape, False)

    def field_of(self, positions, npow: int = 1) -> np.ndarray:
        """Smeared density (``npow=1``) or power sums (``npow=4``) of a point set."""
        f = self.empty_field(npow)
        for x in np.atleast_2d(positions) if len(positions) else []:
            deposit(f, pad3(x), 1.0, *self.args())
        return f

    def stencil(self, x):
        """Flat node indices and kernel values of the stencil of one point."""
        n = self.stencil_size
        idx = np.empty(n, np.int64)
        val = np.empty(n)
        k = stencil_values(pad3(x), *self.args(), idx, val)
        return idx[:k], val[:k]


@dataclass
class DensityField:
    """``rho_gamma(r; q)`` sampled on the nodes of a quadrature grid."""

    grid: QuadratureGrid
    values: np.ndarray

    @classmethod
    def from_configuration(cls, q, params: ModelParams | None = None):
        params = params or q.params
        grid = QuadratureGrid.for_domain(params, q.domain)
        vals = grid.field_of(q.positions, 1)[0]
        return cls(grid, np.maximum(vals, 0.0))
