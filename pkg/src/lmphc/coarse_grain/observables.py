"""Multi-cube correlation observables built from kernel products."""

from __future__ import annotations

import math

import numpy as np

from ..model.domain import ParticleConfiguration
from ..model.grid import QuadratureGrid, pad3


def _cells_in_range(cells: np.ndarray, ell: float, gamma: float) -> bool:
    """True iff every pair of cubes can host particles at distance < 2/gamma."""
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            gap = np.maximum(np.abs(cells[i] - cells[j]) - 1, 0) * ell
            if np.sqrt(np.sum(gap * gap)) >= 2.0 / gamma:
                return False
    return True


def cell_members(q: ParticleConfiguration, cell, ell: float) -> np.ndarray:
    lo = np.asarray(cell) * ell
    inside = np.all((q.positions >= lo) & (q.positions < lo + ell), axis=1)
    return q.positions[inside]


def correlation_observable(q: ParticleConfiguration, cells, n: int | None = None, params=None) -> float:
    """``f_{x_1..x_n}(q)``: ordered tuples of distinct particles, one per cube, weighted by ``J^(n)/n!``.

    Cubes are small cubes given by integer indices.  ``J^(n)`` is the lattice
    quadrature of the product of ``n`` kernels.  Because the cubes are
    distinct, the tuple sum factorizes into the integral of the product of
    the per-cube smeared densities.  For ``n = 1`` the value is the particle
    count of the cube.
    """
    params = params or q.params
    cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
    n = len(cells) if n is None else n
    if n not in (1, 2, 4) or len(cells) != n:
        raise ValueError("need n in {1, 2, 4} cubes")
    if len({tuple(c) for c in cells}) != n:
        raise ValueError("cubes must be distinct")
    ell = params.ell_minus
    members = [cell_members(q, c, ell) for c in cells]
    if n == 1:
        return float(len(members[0]))
    if any(len(m) == 0 for m in members):
        return 0.0
    if not _cells_in_range(cells, ell, params.gamma):
        return 0.0
    grid = QuadratureGrid.covering(params, np.vstack(members))
    prod = None
    for m in members:
        rho = grid.field_of(m, 1)[0]
        prod = rho if prod is None else prod * rho
    return float(grid.weight * prod.sum() / math.factorial(n))


def kernel_product_integral(points, params) -> float:
    """Lattice-quadrature ``J^(n)(r_1, ..., r_n)`` for explicit points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grid = QuadratureGrid.covering(params, pts)
    prod = None
    for x in pts:
        f = grid.field_of(pad3(x)[None, : params.d], 1)[0]
        prod = f if prod is None else prod * f
    return float(grid.weight * prod.sum())
