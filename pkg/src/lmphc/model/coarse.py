"""Cube-averaged kernel and coarse-grained multibody potentials.

With ``B_x(r) = ell^{-d} int_{C_x} J_gamma(r - y) dy`` the coarse potential is

    J~^(n)(x_1, ..., x_n) = int prod_k B_{x_k}(r) dr,

the average of ``J^(n)`` over the product of cubes.  Because ``ell_minus`` is
an integer number of lattice spacings, ``B_x`` sampled on the lattice is the
same array for every cube, shifted by the cube index.
"""

from __future__ import annotations

import hashlib
import math
import os
from pathlib import Path

import numba as nb
import numpy as np

from .grid import QuadratureGrid, _edens
from .kernel import KERNEL_CONSTANTS, KERNEL_ID
from .params import ModelParams

CACHE_ENV = "LMPHC_CACHE_DIR"

#: Gauss-Legendre points per axis for the cube average (d = 1 is exact).
GL_POINTS = {1: 8, 2: 32, 3: 16}


@nb.njit(cache=True)
def _box_average_nd(offsets_shape, m, M, h, gamma, cd, d, yq, wq):
    """B on node offsets ``o`` (relative to the cube corner index), for d = 2, 3."""
    n0, n1, n2 = offsets_shape
    out = np.zeros((n0, n1, n2))
    g2 = gamma * gamma
    amp = cd * gamma**d
    nq = len(yq)
    for a in range(n0):
        x0 = (a - M + 0.5) * h
        for b in range(n1):
            x1 = (b - M + 0.5) * h
            for c in range(n2):
                x2 = (c - M + 0.5) * h if d > 2 else 0.0
                acc = 0.0
                for i in range(nq):
                    d0 = x0 - yq[i]
                    for j in range(nq):
                        d1 = x1 - yq[j]
                        if d == 2:
                            t2 = g2 * (d0 * d0 + d1 * d1)
                            if t2 < 1.0:
                                u = 1.0 - t2
                                acc += wq[i] * wq[j] * u * u * u
                        else:
                            for k in range(nq):
                                d2 = x2 - yq[k]
                                t2 = g2 * (d0 * d0 + d1 * d1 + d2 * d2)
                                if t2 < 1.0:
                                    u = 1.0 - t2
                                    acc += wq[i] * wq[j] * wq[k] * u * u * u
                out[a, b, c] = amp * acc
    return out


def _box_average_1d(m, M, h, gamma):
    """Exact cube average in d = 1: integrate the polynomial piece by piece."""
    ell = m * h
    rc = 1.0 / gamma
    xs, ws = np.polynomial.legendre.leggauss(GL_POINTS[1])
    amp = KERNEL_CONSTANTS[1] * gamma
    out = np.zeros(m + 2 * M)
    for a in range(m + 2 * M):
        x = (a - M + 0.5) * h
        lo, hi = max(0.0, x - rc), min(ell, x + rc)
        if hi <= lo:
            continue
        y = 0.5 * (hi - lo) * xs + 0.5 * (hi + lo)
        t = gamma * (x - y)
        out[a] = amp * 0.5 * (hi - lo) * np.dot(ws, (1.0 - t * t) ** 3)
    return out / ell


def _cache_key(params: ModelParams) -> str:
    spec = (f"{params.d}|{params.gamma!r}|{params.ell_minus!r}|{KERNEL_ID}|"
            f"m={params.nodes_per_cube}|gl={GL_POINTS[params.d]}")
    return hashlib.sha256(spec.encode()).hexdigest()[:24]


class CoarseKernel:
    """Sampled cube average ``B`` plus helpers for coarse potentials and fields.

    ``stencil[o]`` holds ``B`` at the node whose global index is
    ``j * m + o - M`` for a cube with index ``j``.
    """

    def __init__(self, params: ModelParams, cache_dir: str | os.PathLike | None = None):
        self.params = params
        self.d = params.d
        self.m = params.nodes_per_cube
        self.h = params.grid_spacing
        self.M = int(math.ceil(1.0 / (params.gamma * self.h))) + 1
        self.ell = params.ell_minus
        self.key = _cache_key(params)
        cache_dir = cache_dir or os.environ.get(CACHE_ENV)
        path = Path(cache_dir) / f"btilde-{self.key}.npy" if cache_dir else None
        if path is not None and path.exists():
            self.stencil = np.load(path)
            self.cache_hit = True
        else:
            self.stencil = self._compute()
            self.cache_hit = False
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp.npy")
                np.save(tmp, self.stencil)
                os.replace(tmp, path)

    def _compute(self) -> np.ndarray:
        p = self.params
        n = self.m + 2 * self.M
        if p.d == 1:
            return _box_average_1d(self.m, self.M, self.h, p.gamma).reshape(n, 1, 1)
        xs, ws = np.polynomial.legendre.leggauss(GL_POINTS[p.d])
        yq = 0.5 * self.ell * (xs + 1.0)
        wq = 0.5 * ws  # per-axis weights of the *average*: (ell/2) w / ell
        shape = (n, n, n if p.d == 3 else 1)
        return _box_average_nd(shape, self.m, self.M, self.h, p.gamma, KERNEL_CONSTANTS[p.d],
                               p.d, yq, wq)

    @property
    def width(self) -> int:
        return self.m + 2 * self.M

    def cube_center(self, index) -> np.ndarray:
        return (np.asarray(index, dtype=float) + 0.5) * self.ell

    def grid_for_cubes(self, cubes: np.ndarray, periodic_grid: QuadratureGrid | None = None):
        if periodic_grid is not None:
            return periodic_grid
        cubes = np.atleast_2d(cubes)
        lo_c = cubes.min(axis=0)
        hi_c = cubes.max(axis=0)
        lo = np.zeros(3, np.int64)
        shape = np.ones(3, np.int64)
        lo[: self.d] = lo_c * self.m - self.M
        shape[: self.d] = (hi_c - lo_c) * self.m + self.width
        return QuadratureGrid(self.d, self.h, self.params.gamma, lo, shape, False)

    def power_field(self, cubes, counts, grid: QuadratureGrid, npow: int = 4) -> np.ndarray:
        """``P_k(r) = sum_x n_x B_x(r)^k`` on ``grid`` (channels k = 1..npow)."""
        cubes = np.atleast_2d(np.asarray(cubes, dtype=np.int64))
        counts = np.asarray(counts, dtype=float)
        field = grid.empty_field(npow)
        c3 = np.zeros((len(cubes), 3), np.int64)
        c3[:, : self.d] = cubes
        _deposit_counts(field, self.stencil, c3, counts, self.m, self.M, grid.lo, grid.shape,
                        grid.periodic, self.d)
        return field

    def coarse_potential(self, cubes, periodic_side: int | None = None) -> float:
        """``J~^(n)`` for the listed cube indices (n = number of rows, repeats allowed).

        ``periodic_side`` (in cubes) selects minimum-image placement on a torus.
        """
        cubes = np.atleast_2d(np.asarray(cubes, dtype=np.int64)).copy()
        if periodic_side is not None:
            ref = cubes[0]
            cubes = ref + (cubes - ref + periodic_side // 2) % periodic_side - periodic_side // 2
        span = np.ptp(cubes, axis=0) if len(cubes) > 1 else np.zeros(self.d, np.int64)
        if np.any(span * self.m >= self.width):
            return 0.0
        grid = self.grid_for_cubes(cubes)
        prod = None
        for c in cubes:
            f = self.power_field(c[None, :], [1.0], grid, npow=1)[0]
            prod = f if prod is None else prod * f
        return grid.weight * float(np.sum(prod))

    def h0_energy(self, cubes, counts, bar_cubes=None, bar_counts=None,
                  grid: QuadratureGrid | None = None) -> float:
        """Coarse Hamiltonian from counts: ``-lambda N + int [e(P(n+nbar)) - e(P(nbar))]``.

        The energy density is the distinct-index one, so a single particle in
        a cube does not interact with itself.
        """
        cubes = np.atleast_2d(np.asarray(cubes, dtype=np.int64))
        counts = np.asarray(counts, dtype=float)
        lam_term = -self.params.lam * float(np.sum(counts))
        if not self.params.kac or float(np.sum(counts)) == 0.0:
            return lam_term
        if grid is None:
            grid = self.grid_for_cubes(cubes)
        extra = self.power_field(cubes, counts, grid)
        if bar_cubes is not None and len(bar_cubes):
            base = self.power_field(bar_cubes, bar_counts, grid)
        else:
            base = np.zeros_like(extra)
        return lam_term + grid.weight * _relative_distinct(base, extra)


@nb.njit(cache=True)
def _deposit_counts(field, stencil, cubes, counts, m, M, lo, shape, periodic, d):
    npow = field.shape[0]
    w0, w1, w2 = stencil.shape
    for c in range(cubes.shape[0]):
        n = counts[c]
        if n == 0.0:
            continue
        b0 = cubes[c, 0] * m - M
        b1 = cubes[c, 1] * m - M if d > 1 else 0
        b2 = cubes[c, 2] * m - M if d > 2 else 0
        for a in range(w0):
            i0 = b0 + a - lo[0]
            if periodic:
                i0 %= shape[0]
            elif i0 < 0 or i0 >= shape[0]:
                continue
            for b in range(w1):
                i1 = b1 + b - lo[1] if d > 1 else 0
                if d > 1:
                    if periodic:
                        i1 %= shape[1]
                    elif i1 < 0 or i1 >= shape[1]:
                        continue
                for e in range(w2):
                    i2 = b2 + e - lo[2] if d > 2 else 0
                    if d > 2:
                        if periodic:
                            i2 %= shape[2]
                        elif i2 < 0 or i2 >= shape[2]:
                            continue
                    v = stencil[a, b, e]
                    if v == 0.0:
                        continue
                    vk = v
                    for k in range(npow):
                        field[k, i0, i1, i2] += n * vk
                        vk *= v


@nb.njit(cache=True)
def _relative_distinct(base, extra):
    total = 0.0
    for i0 in range(base.shape[1]):
        for i1 in range(base.shape[2]):
            for i2 in range(base.shape[3]):
                if extra[0, i0, i1, i2] == 0.0:
                    continue
                b1 = base[0, i0, i1, i2]
                b2 = base[1, i0, i1, i2]
                b3 = base[2, i0, i1, i2]
                b4 = base[3, i0, i1, i2]
                total += _edens(b1 + extra[0, i0, i1, i2], b2 + extra[1, i0, i1, i2],
                                b3 + extra[2, i0, i1, i2], b4 + extra[3, i0, i1, i2],
                                4) - _edens(b1, b2, b3, b4, 4)
    return total


_KERNEL_CACHE: dict = {}


def coarse_kernel(params: ModelParams) -> CoarseKernel:
    """Process-wide memoized :class:`CoarseKernel` for ``params``."""
    key = (_cache_key(params), params.lam, params.kac)
    ck = _KERNEL_CACHE.get(key)
    if ck is None:
        ck = _KERNEL_CACHE[key] = CoarseKernel(params)
    return ck


def coarse_potential(n: int, cubes, params: ModelParams) -> float:
    """``J~^(n)`` for ``n`` cube indices (rows of ``cubes``)."""
    cubes = np.atleast_2d(np.asarray(cubes, dtype=np.int64))
    if len(cubes) != n:
        raise ValueError(f"expected {n} cubes, got {len(cubes)}")
    return coarse_kernel(params).coarse_potential(cubes)
