"""Energy evaluations: smeared-density functional, explicit multibody sums,
relative and interaction energies.

Both the functional and the multibody forms use the same quadrature lattice,
so the kernel products ``J^(n)`` they imply are identical node by node.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.spatial import cKDTree

from .domain import Domain, HardCoreViolation, ParticleConfiguration, pair_violations
from .grid import QuadratureGrid, field_energy, pad3, relative_field_energy
from .kernel import kernel_of_distance
from .params import ModelParams

#: Returned by relative energies when the union violates the hard core.
HARD_CORE_ENERGY = math.inf

MULTIBODY_NEIGHBOR_CAP = 64


class MultibodyGuardError(RuntimeError):
    """Too many particles within one interaction range for the explicit 4-body sum."""


def npow_for(params: ModelParams, convention: str | None = None) -> int:
    conv = convention or params.hamiltonian
    return 1 if conv == "functional" else 4


def _unpack(q, params, domain):
    if isinstance(q, ParticleConfiguration):
        return q.positions, (params or q.params), (domain or q.domain)
    if params is None:
        raise ValueError("params are required for raw position arrays")
    pos = np.asarray(q, dtype=float).reshape(-1, params.d) if np.size(q) else np.zeros((0, params.d))
    return pos, params, domain


def _grid_for(params: ModelParams, positions: np.ndarray, domain: Domain | None):
    if domain is not None and domain.periodic:
        return QuadratureGrid.for_domain(params, domain)
    return QuadratureGrid.covering(params, positions)


def local_density(r, q: ParticleConfiguration) -> float:
    """``rho_gamma(r; q)``: kernel sum over particles within ``1/gamma`` of ``r``."""
    params = q.params
    if q.n == 0:
        return 0.0
    r = np.asarray(r, dtype=float).reshape(params.d)
    cand = q.cell_index.candidates(r, 1.0 / params.gamma)
    if len(cand) == 0:
        return 0.0
    diff = q.domain.displacement(q.positions[cand], r)
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    return float(np.sum(kernel_of_distance(dist, params.gamma, params.d)))


def energy_functional(q, params: ModelParams | None = None, domain: Domain | None = None,
                      convention: str = "functional") -> float:
    """``-lambda |q| + int e_0(rho_gamma(r; q)) dr`` by lattice quadrature.

    The linear term is integrated exactly.  ``convention="multibody"`` swaps
    the energy density for its distinct-index counterpart.
    """
    pos, params, domain = _unpack(q, params, domain)
    if not isinstance(q, ParticleConfiguration) and pair_violations(pos, params.hc_radius, domain):
        raise HardCoreViolation("configuration is not hard-core admissible")
    n = len(pos)
    if n == 0:
        return 0.0
    linear = -params.lam * n
    if not params.kac:
        return linear
    grid = _grid_for(params, pos, domain)
    f = grid.field_of(pos, npow_for(params, convention))
    return linear + grid.weight * field_energy(f)


def energy(q, params: ModelParams | None = None, domain: Domain | None = None) -> float:
    """Energy in the convention selected by ``params.hamiltonian``."""
    pos, params, domain = _unpack(q, params, domain)
    return energy_functional(pos, params, domain, params.hamiltonian) if len(pos) else 0.0


def _sparse_stencils(grid: QuadratureGrid, pos: np.ndarray):
    out = []
    for x in pos:
        idx, val = grid.stencil(x)
        order = np.argsort(idx)
        out.append((idx[order], val[order]))
    return out


def _product_integral(stencils, members, powers, weight) -> float:
    idx = stencils[members[0]][0]
    for m in members[1:]:
        idx = np.intersect1d(idx, stencils[m][0], assume_unique=True)
        if len(idx) == 0:
            return 0.0
    prod = np.ones(len(idx))
    for m, p in zip(members, powers):
        sidx, sval = stencils[m]
        prod *= sval[np.searchsorted(sidx, idx)] ** p
    return weight * float(np.sum(prod))


def _cliques(adj: list[set], n: int, size: int):
    """All increasing index tuples of ``size`` that are pairwise adjacent."""
    def extend(prefix, cands):
        if len(prefix) == size:
            yield tuple(prefix)
            return
        for c in sorted(cands):
            if prefix and c <= prefix[-1]:
                continue
            yield from extend(prefix + [c], cands & adj[c])
    for i in range(n):
        yield from extend([i], adj[i])


def _compositions(total: int, parts: int):
    for cut in itertools.combinations(range(1, total), parts - 1):
        bounds = (0, *cut, total)
        yield tuple(bounds[k + 1] - bounds[k] for k in range(parts))


def energy_multibody(q, params: ModelParams | None = None, domain: Domain | None = None,
                     distinct: bool = False) -> float:
    """Explicit 2- and 4-body sums ``-lambda N - (1/2!) sum J2 + (1/4!) sum J4``.

    ``J^(n)`` are lattice quadratures of kernel products.  With
    ``distinct=False`` ordered tuples may repeat an index, which reproduces
    :func:`energy_functional`; ``distinct=True`` keeps only tuples of distinct
    particles.
    """
    pos, params, domain = _unpack(q, params, domain)
    n = len(pos)
    if n == 0:
        return 0.0
    if pair_violations(pos, params.hc_radius, domain):
        raise HardCoreViolation("configuration is not hard-core admissible")
    linear = -params.lam * n
    if not params.kac:
        return linear
    reach = 2.0 / params.gamma
    tree = cKDTree(pos, boxsize=domain.side) if domain is not None and domain.periodic else cKDTree(pos)
    adj = [set() for _ in range(n)]
    for i, j in tree.query_pairs(reach):
        adj[i].add(j)
        adj[j].add(i)
    if max(len(a) for a in adj) + 1 > MULTIBODY_NEIGHBOR_CAP:
        raise MultibodyGuardError(
            f"more than {MULTIBODY_NEIGHBOR_CAP} particles within one interaction range")
    grid = _grid_for(params, pos, domain)
    st = _sparse_stencils(grid, pos)
    w = grid.weight

    def tuple_sum(order: int) -> float:
        total = 0.0
        sizes = [order] if distinct else range(1, order + 1)
        for s in sizes:
            for clique in _cliques(adj, n, s):
                for mult in _compositions(order, s):
                    coeff = 1.0 / math.prod(math.factorial(m) for m in mult)
                    total += coeff * _product_integral(st, clique, mult, w)
        return total

    # (1/n!) * sum over ordered tuples = sum over multisets / prod(m_i!)
    return linear - tuple_sum(2) + tuple_sum(4)


def relative_energy(q, q_bar, params: ModelParams | None = None, domain: Domain | None = None,
                    convention: str | None = None) -> float:
    """``H(q | q_bar) = H(q + q_bar) - H(q_bar)``.

    Returns :data:`HARD_CORE_ENERGY` (``+inf``) when the union is not
    admissible.  Floating overflow raises ``FloatingPointError`` instead.
    """
    pos, params, domain = _unpack(q, params, domain)
    bar = np.asarray(q_bar, dtype=float).reshape(-1, params.d) if np.size(q_bar) else np.zeros((0, params.d))
    if len(pos) == 0:
        return 0.0
    union = np.vstack([pos, bar])
    if pair_violations(union, params.hc_radius, domain):
        return HARD_CORE_ENERGY
    linear = -params.lam * len(pos)
    if not params.kac:
        return linear
    npow = npow_for(params, convention)
    grid = _grid_for(params, pos, domain)
    base = grid.field_of(bar, npow)
    extra = grid.field_of(pos, npow)
    with np.errstate(over="raise", invalid="raise"):
        return linear + grid.weight * relative_field_energy(base, extra)


def interaction_energy(q, q_bar, params: ModelParams | None = None, domain: Domain | None = None,
                       convention: str | None = None) -> float:
    """``U(q, q_bar) = H(q + q_bar) - H(q) - H(q_bar)``."""
    pos, params, domain = _unpack(q, params, domain)
    rel = relative_energy(pos, q_bar, params, domain, convention)
    if math.isinf(rel):
        return rel
    return rel - energy_functional(pos, params, domain, convention or params.hamiltonian)


def pair_potential_grid(x1, x2, params: ModelParams) -> float:
    """Lattice-quadrature ``J^(2)(x1, x2)``, consistent with the energies above."""
    grid = QuadratureGrid.covering(params, np.vstack([pad3(x1)[: params.d], pad3(x2)[: params.d]]))
    st = _sparse_stencils(grid, np.vstack([np.atleast_1d(x1), np.atleast_1d(x2)]).reshape(2, params.d))
    return _product_integral(st, (0, 1), (1, 1), grid.weight)
