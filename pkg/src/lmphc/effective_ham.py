"""Coarse-grained effective Hamiltonian for per-cube occupation numbers.

For counts ``n_x`` on small cubes the effective Hamiltonian is

    h(rho | qbar) = -sum_x log(ell^{d n_x} / n_x!) - sum_x log Z_{x,qbar}
                    + beta h0(rho | rhobar) + h^p(rho | qbar)

where ``h0`` uses cube-averaged kernels, ``Z_{x,qbar}`` accounts for the
volume the boundary hard core removes from cube ``x`` and ``h^p`` collects
the remainder ``Delta H = H - h0`` together with the hard core among the
particles, ``h^p = -log E0(exp(-beta Delta H) 1_admissible)``.  ``E0`` is the
product measure with ``n_x`` independent uniform points in the admissible
part of each cube.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba as nb
import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from .meanfield import e_lambda
from .model.coarse import CoarseKernel, coarse_kernel
from .model.domain import distance
from .model.energy import relative_energy
from .model.grid import QuadratureGrid, deposit, relative_field_energy
from .model.kernel import kernel_gradient_bound, kernel_of_distance
from .model.params import ModelParams

#: Maximum rejection-sampling attempts per particle.
MAX_TRIES = 10_000
#: Pilot draws used to estimate the acceptance rate of a cube.
PILOT = 10_000


class MissingPrecomputationError(RuntimeError):
    """Coarse tables were built for different parameters."""


class RejectionError(RuntimeError):
    """The admissible part of a cube is too small for rejection sampling."""


class EstimateError(RuntimeError):
    """A Monte Carlo estimate is not positive within its noise."""


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float
    n: int

    def within(self, other: float, k: float = 3.0, extra: float = 0.0) -> bool:
        return abs(self.value - other) <= k * self.sigma + extra


@dataclass(frozen=True)
class DensityConfig:
    """Sparse occupation numbers: integer cube indices with their counts."""

    cubes: np.ndarray  # (K, d) int
    counts: np.ndarray  # (K,) int

    def __post_init__(self):
        cubes = np.atleast_2d(np.asarray(self.cubes, dtype=np.int64))
        counts = np.asarray(self.counts, dtype=np.int64).ravel()
        if len(cubes) != len(counts):
            raise ValueError("one count per cube is required")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "cubes", cubes)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, d: int) -> "DensityConfig":
        return cls(np.zeros((0, d), np.int64), np.zeros(0, np.int64))

    @classmethod
    def from_positions(cls, positions, ell: float, d: int) -> "DensityConfig":
        pos = np.asarray(positions, dtype=float).reshape(-1, d)
        if len(pos) == 0:
            return cls.empty(d)
        idx = np.floor(pos / ell).astype(np.int64)
        cubes, counts = np.unique(idx, axis=0, return_counts=True)
        return cls(cubes, counts)

    @property
    def d(self) -> int:
        return self.cubes.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def densities(self, ell: float) -> np.ndarray:
        return self.counts / ell**self.d

    def in_window(self, rho_s: float, zeta: float, ell: float) -> bool:
        """Restricted-ensemble check ``|n_x/ell^d - rho_s| <= zeta`` on every listed cube."""
        return bool(np.all(np.abs(self.densities(ell) - rho_s) <= zeta))


def _points(x, d: int) -> np.ndarray:
    if x is None or np.size(x) == 0:
        return np.zeros((0, d))
    return np.asarray(x, dtype=float).reshape(-1, d)


# ---------------------------------------------------------------------------
# boundary factors
# ---------------------------------------------------------------------------
def _cube_distance(points: np.ndarray, lo: np.ndarray, ell: float) -> np.ndarray:
    gap = np.maximum(np.maximum(lo - points, points - (lo + ell)), 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


def _union_length(centres: np.ndarray, halves: np.ndarray, a: float, b: float) -> float:
    """Length of ``[a, b]`` covered by the intervals ``centres +- halves``."""
    if len(centres) == 0:
        return 0.0
    lo = np.clip(centres - halves, a, b)
    hi = np.clip(centres + halves, a, b)
    order = np.argsort(lo)
    total, cur_lo, cur_hi = 0.0, lo[order[0]], hi[order[0]]
    for j in order[1:]:
        if lo[j] > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo[j], hi[j]
        else:
            cur_hi = max(cur_hi, hi[j])
    return total + cur_hi - cur_lo


def _disc_breakpoints(cx, cy, r, a, b, c, e) -> np.ndarray:
    """Heights in ``(c, e)`` where the covered chord length of ``[a, b]`` is not smooth."""
    pts = [cy - r, cy + r]
    for edge in (a, b):
        s2 = r * r - (edge - cx) ** 2
        ok = s2 > 0
        pts += [cy[ok] - np.sqrt(s2[ok]), cy[ok] + np.sqrt(s2[ok])]
    k = len(cx)
    for i in range(k):
        for j in range(i + 1, k):
            dx, dy = cx[j] - cx[i], cy[j] - cy[i]
            dist = math.hypot(dx, dy)
            if dist == 0 or dist >= r[i] + r[j] or dist <= abs(r[i] - r[j]):
                continue
            t = (r[i] ** 2 - r[j] ** 2 + dist * dist) / (2 * dist)
            hgt = math.sqrt(max(r[i] ** 2 - t * t, 0.0))
            my = cy[i] + t * dy / dist
            pts.append(np.array([my + hgt * dx / dist, my - hgt * dx / dist]))
    allp = np.concatenate([np.atleast_1d(x) for x in pts])
    return np.unique(allp[(allp > c) & (allp < e)])


def _excluded_area(cx, cy, r, a, b, c, e, limit: int, tol: float = 1e-12) -> float:
    """Area of ``[a, b] x [c, e]`` covered by discs, by adaptive quadrature over heights."""
    if len(cx) == 0:
        return 0.0

    def chord(y):
        s2 = r * r - (y - cy) ** 2
        ok = s2 > 0
        return _union_length(cx[ok], np.sqrt(s2[ok]), a, b)

    edges = np.concatenate([[c], _disc_breakpoints(cx, cy, r, a, b, c, e), [e]])
    return float(sum(quad(chord, lo, hi, limit=limit, epsabs=tol, epsrel=tol)[0]
                     for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo))


def admissible_volume(cube, q_bar, R: float, ell: float, d: int, resolution: int = 64) -> float:
    """Volume of the points of cube ``cube`` farther than ``R`` from every boundary particle.

    The covered length along a line is an exact union of chords.  In d = 2
    the chord length is integrated adaptively between its kinks (tangent
    heights, edge crossings, circle intersections); in d = 3 the covered
    area of each cross-section is integrated the same way over the first
    axis.  ``resolution`` is the subdivision limit of each adaptive rule.
    """
    if resolution < 32:
        raise ValueError("resolution must be at least 32")
    lo = np.asarray(cube, dtype=float).reshape(d) * ell
    hi = lo + ell
    pts = _points(q_bar, d)
    near = pts[_cube_distance(pts, lo, ell) <= R] if len(pts) and R > 0 else np.zeros((0, d))
    full = ell**d
    if len(near) == 0:
        return full
    if d == 1:
        return full - _union_length(near[:, 0], np.full(len(near), R), lo[0], hi[0])
    if d == 2:
        return full - _excluded_area(near[:, 0], near[:, 1], np.full(len(near), R),
                                     lo[0], hi[0], lo[1], hi[1], resolution)

    def section(t):
        s2 = R * R - (t - near[:, 0]) ** 2
        ok = s2 > 0
        return _excluded_area(near[ok, 1], near[ok, 2], np.sqrt(s2[ok]), lo[1], hi[1], lo[2], hi[2],
                              resolution, tol=1e-8)

    cuts = np.concatenate([near[:, 0] - R, near[:, 0] + R])
    edges = np.unique(np.concatenate([[lo[0]], cuts[(cuts > lo[0]) & (cuts < hi[0])], [hi[0]]]))
    excl = sum(quad(section, x0, x1, limit=resolution, epsabs=1e-7, epsrel=1e-7)[0]
               for x0, x1 in zip(edges[:-1], edges[1:]))
    return full - float(excl)


@dataclass(frozen=True)
class BoundaryFactor:
    cube: tuple
    volume: float
    ell: float
    d: int

    def log_Z(self, n_x: int) -> float:
        """``n_x log(|C_x^qbar| / ell^d)``; ``-inf`` if the cube is fully excluded."""
        if n_x == 0:
            return 0.0
        if self.volume <= 0:
            return -math.inf
        return n_x * math.log(self.volume / self.ell**self.d)


def boundary_factors(rho: DensityConfig, q_bar, params: ModelParams, resolution: int = 64):
    ell, d = params.ell_minus, params.d
    return [BoundaryFactor(tuple(c), admissible_volume(c, q_bar, params.hc_radius, ell, d, resolution),
                           ell, d) for c in rho.cubes]


# ---------------------------------------------------------------------------
# coarse Hamiltonian
# ---------------------------------------------------------------------------
def precompute_tables(params: ModelParams) -> CoarseKernel:
    """Coarse kernel tables (memoized, optionally disk-cached)."""
    return coarse_kernel(params)


def _tables_for(params: ModelParams, tables: CoarseKernel | None) -> CoarseKernel:
    if tables is None:
        return coarse_kernel(params)
    p = tables.params
    if (p.d, p.gamma, p.ell_minus, p.nodes_per_cube) != (params.d, params.gamma, params.ell_minus,
                                                         params.nodes_per_cube):
        raise MissingPrecomputationError(
            "coarse tables were computed for different (d, gamma, ell_-, grid) parameters; "
            "call precompute_tables(params)")
    return tables


def _counts_of(rho) -> DensityConfig:
    return rho if isinstance(rho, DensityConfig) else DensityConfig(*rho)


def h0(rho: DensityConfig, rho_bar: DensityConfig | None, params: ModelParams,
       tables: CoarseKernel | None = None) -> float:
    """Coarse Hamiltonian ``H^(ell_-)(rho | rho_bar)`` from occupation numbers only.

    Equals ``-lambda N - 1/2 sum_{i != j} J~2 + 1/4! sum_{distinct} J~4`` over
    particles labelled by their cubes, including interactions with the
    boundary counts.
    """
    rho = _counts_of(rho)
    ck = _tables_for(params, tables)
    if rho.total == 0:
        return 0.0
    bar_c = bar_n = None
    cubes = rho.cubes
    if rho_bar is not None and rho_bar.total:
        rho_bar = _counts_of(rho_bar)
        bar_c, bar_n = rho_bar.cubes, rho_bar.counts
        cubes = np.vstack([rho.cubes, rho_bar.cubes])
    grid = ck.grid_for_cubes(cubes)
    return ck.h0_energy(rho.cubes, rho.counts, bar_c, bar_n, grid)


def h0_direct(rho: DensityConfig, params: ModelParams) -> float:
    """Reference evaluation of ``h0`` by explicit sums over particle labels (no boundary)."""
    rho = _counts_of(rho)
    labels = np.repeat(rho.cubes, rho.counts, axis=0)
    n = len(labels)
    ck = coarse_kernel(params)
    memo: dict = {}

    def J(idx):
        key = tuple(sorted(tuple(labels[i]) for i in idx))
        if key not in memo:
            memo[key] = ck.coarse_potential(np.array(key))
        return memo[key]

    total = -params.lam * n
    for i in range(n):
        for j in range(n):
            if i != j:
                total -= 0.5 * J((i, j))
    for four in np.ndindex(*(n,) * 4) if n >= 4 else []:
        if len(set(four)) == 4:
            total += J(four) / 24.0
    return total


def delta_H(q, q_bar, params: ModelParams, tables: CoarseKernel | None = None) -> float:
    """``H(q | qbar) - h0(counts(q) | counts(qbar))`` with distinct-index energies."""
    d = params.d
    pos = _points(q, d)
    bar = _points(q_bar, d)
    if len(pos) == 0:
        return 0.0
    full = relative_energy(pos, bar, params, None, convention="multibody")
    rho = DensityConfig.from_positions(pos, params.ell_minus, d)
    rho_bar = DensityConfig.from_positions(bar, params.ell_minus, d)
    return full - h0(rho, rho_bar, params, tables)


def delta_H_bound(q, params: ModelParams, n_bar: int = 0) -> float:
    """Lipschitz bound on ``|Delta H|`` for particles displaced within their cubes.

    ``|grad_{r_1} J^(2)| <= L`` and ``|grad_{r_1} J^(4)| <= L ||J||_inf^2``
    with ``L`` the kernel's Lipschitz constant; each particle is at most
    ``sqrt(d) ell_-`` from any point of its cube.  ``n_bar`` boundary
    particles add one moving end per pair; boundary quadruple terms are not
    covered, so this is a bound for the pair and bulk parts only when
    ``n_bar > 0``.
    """
    n = len(np.asarray(q).reshape(-1, params.d))
    L = kernel_gradient_bound(params.gamma, params.d)
    jmax = float(kernel_of_distance(np.array([0.0]), params.gamma, params.d)[0])
    diam = math.sqrt(params.d) * params.ell_minus
    pairs = n * (n - 1) / 2
    quads = math.comb(n, 4)
    return pairs * 2 * L * diam + n * n_bar * L * diam + quads * 4 * L * jmax**2 * diam


# ---------------------------------------------------------------------------
# reference measure E0
# ---------------------------------------------------------------------------
def _sample_positions(rho: DensityConfig, q_bar, params: ModelParams, n_samples: int,
                      rng: np.random.Generator) -> np.ndarray:
    """``(n_samples, N, d)`` independent uniform points in the admissible part of each cube."""
    d, ell, R = params.d, params.ell_minus, params.hc_radius
    bar = _points(q_bar, d)
    blocks = []
    for cube, n in zip(rho.cubes, rho.counts):
        if n == 0:
            continue
        lo = cube * ell
        near = bar[_cube_distance(bar, lo, ell) <= R] if len(bar) and R > 0 else np.zeros((0, d))
        if len(near):
            pilot = lo + rng.random((PILOT, d)) * ell
            ok = np.all(distance(pilot[:, None, :] - near[None]) > R, axis=1)
            frac = ok.mean()
            if frac < 1e-3:
                raise RejectionError(
                    f"rejection rate {1 - frac:.6f} > 0.999 in cube {cube.tolist()}")
        pts = lo + rng.random((n_samples, n, d)) * ell
        if len(near):
            bad = np.ones(pts.shape[:2], bool)
            for _ in range(MAX_TRIES):
                diff = pts[:, :, None, :] - near[None, None, :, :]
                bad = np.any(distance(diff) <= R, axis=-1)
                if not bad.any():
                    break
                pts[bad] = lo + rng.random((int(bad.sum()), d)) * ell
            else:
                raise RejectionError(f"rejection sampling exceeded {MAX_TRIES} tries per particle")
        blocks.append(pts)
    if not blocks:
        return np.zeros((n_samples, 0, d))
    return np.concatenate(blocks, axis=1)


def _mean_estimate(values: np.ndarray) -> Estimate:
    v = np.asarray(values, dtype=float)
    n = len(v)
    sigma = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(float(v.mean()), sigma, n)


def reference_expectation_E0(rho: DensityConfig, q_bar, observable: Callable, params: ModelParams,
                             n_samples: int = 10_000, seed: int = 0, vectorized: bool = False,
                             max_particles: int = 12) -> Estimate:
    """Monte Carlo average of ``observable(positions)`` under the cube product measure.

    ``observable`` receives an ``(N, d)`` array (or ``(S, N, d)`` with
    ``vectorized=True``).
    """
    rho = _counts_of(rho)
    if rho.total > max_particles:
        raise ValueError(f"{rho.total} particles exceed the cap of {max_particles}")
    rng = np.random.default_rng(seed)
    pos = _sample_positions(rho, q_bar, params, n_samples, rng)
    vals = observable(pos) if vectorized else np.array([observable(p) for p in pos], dtype=float)
    return _mean_estimate(vals)


@nb.njit(cache=True)
def _delta_batch(samples, base, lo, shape, periodic, h, gamma, cd, d, weight, lam):
    """``H(q | qbar)`` per sample: deposit into a scratch field, evaluate, undeposit."""
    S, N = samples.shape[0], samples.shape[1]
    out = np.empty(S)
    extra = np.zeros_like(base)
    for s in range(S):
        for i in range(N):
            deposit(extra, samples[s, i], 1.0, lo, shape, periodic, h, gamma, cd, d)
        out[s] = -lam * N + weight * relative_field_energy(base, extra)
        extra[:] = 0.0
    return out


def _admissible_mask(pos: np.ndarray, R: float) -> np.ndarray:
    S, N, _ = pos.shape
    if R <= 0 or N < 2:
        return np.ones(S, bool)
    iu = np.triu_indices(N, 1)
    diff = pos[:, iu[0], :] - pos[:, iu[1], :]
    return np.all(distance(diff) > R, axis=1)


def _log_weights(pos: np.ndarray, rho: DensityConfig, q_bar, params: ModelParams,
                 tables: CoarseKernel | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``-beta Delta H`` per sample together with the admissibility mask."""
    d = params.d
    S, N, _ = pos.shape
    adm = _admissible_mask(pos, params.hc_radius)
    if N == 0 or not params.kac:
        return np.zeros(S), adm
    bar = _points(q_bar, d)
    lo = np.array([c * params.ell_minus for c in rho.cubes.min(axis=0)])
    hi = np.array([(c + 1) * params.ell_minus for c in rho.cubes.max(axis=0)])
    grid = QuadratureGrid.covering(params, np.vstack([lo, hi]))
    base = grid.field_of(bar, 4)
    p3 = np.zeros((S, N, 3))
    p3[:, :, :d] = pos
    g = grid
    H = _delta_batch(p3, base, g.lo, g.shape, g.periodic, g.h, g.gamma, g.cd, d, g.weight,
                     params.lam)
    rho_bar = DensityConfig.from_positions(bar, params.ell_minus, d)
    dH = H - h0(rho, rho_bar, params, tables)
    return -params.beta * dH, adm


def h_p_direct(rho: DensityConfig, q_bar, params: ModelParams, n_samples: int = 10_000,
               seed: int = 0, tables: CoarseKernel | None = None) -> Estimate:
    """``h^p = -log E0(exp(-beta Delta H) 1_admissible)`` with a delta-method error bar.

    The hard-core factor is the indicator that the sampled points are more
    than ``R`` apart; the boundary hard core is part of ``E0`` itself.
    """
    rho = _counts_of(rho)
    rng = np.random.default_rng(seed)
    pos = _sample_positions(rho, q_bar, params, n_samples, rng)
    logw, adm = _log_weights(pos, rho, q_bar, params, tables)
    w = np.where(adm, np.exp(logw), 0.0)
    est = _mean_estimate(w)
    if est.value <= 2 * est.sigma or est.value <= 0:
        raise EstimateError(f"E0 estimate not positive within noise: mean {est.value}, sigma {est.sigma}")
    return Estimate(-math.log(est.value), est.sigma / est.value, n_samples)


def tilted_expectation(f: Callable, rho: DensityConfig, q_bar, params: ModelParams,
                       n_samples: int = 10_000, seed: int = 0) -> Estimate:
    """``E_{rho,qbar}(f) = E0(f w) / E0(w)`` with ``w = exp(-beta Delta H) 1_admissible``.

    The error bar uses the covariance of numerator and denominator (delta method).
    """
    rho = _counts_of(rho)
    rng = np.random.default_rng(seed)
    pos = _sample_positions(rho, q_bar, params, n_samples, rng)
    logw, adm = _log_weights(pos, rho, q_bar, params)
    w = np.where(adm, np.exp(logw), 0.0)
    fv = np.array([f(p) for p in pos], dtype=float)
    a, b = fv * w, w
    ma, mb = a.mean(), b.mean()
    if mb <= 0:
        raise EstimateError("all sampled configurations have zero weight")
    r = ma / mb
    cov = np.cov(np.vstack([a, b]), ddof=1) / n_samples
    var = (cov[0, 0] - 2 * r * cov[0, 1] + r * r * cov[1, 1]) / mb**2
    return Estimate(float(r), float(math.sqrt(max(var, 0.0))), n_samples)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------
def entropy_term(rho: DensityConfig, ell: float, d: int) -> float:
    """``-sum_x log(ell^{d n_x} / n_x!)`` with exact log-factorials."""
    n = rho.counts.astype(float)
    return float(-np.sum(n * d * math.log(ell) - gammaln(n + 1)))


def assemble_h(rho: DensityConfig, q_bar, params: ModelParams, hp_provider: Callable | None = None,
               hc_provider: Callable | None = None, rho_bar: DensityConfig | None = None,
               boundary_resolution: int = 64) -> float:
    """Full effective Hamiltonian ``h(rho | qbar)``.

    ``hp_provider(rho, q_bar, params)`` returns ``h^p`` (a float or an
    :class:`Estimate`); ``None`` means ``h^p = 0``.  ``hc_provider`` adds an
    optional contour contribution.  ``rho_bar`` defaults to the counts of
    ``q_bar``.  Without boundary particles the ``log Z`` term is absent.
    """
    rho = _counts_of(rho)
    d, ell = params.d, params.ell_minus
    bar = _points(q_bar, d)
    if rho_bar is None:
        rho_bar = DensityConfig.from_positions(bar, ell, d)
    total = entropy_term(rho, ell, d)
    if len(bar) and params.hc_radius > 0:
        for bf, n in zip(boundary_factors(rho, bar, params, boundary_resolution), rho.counts):
            total -= bf.log_Z(int(n))
    total += params.beta * h0(rho, rho_bar, params)
    for provider in (hp_provider, hc_provider):
        if provider is not None:
            v = provider(rho, bar, params)
            total += v.value if isinstance(v, Estimate) else float(v)
    return total


# ---------------------------------------------------------------------------
# surface term
# ---------------------------------------------------------------------------
def _surface_on_lattice(region: np.ndarray, rho_s: float, lam: float, params: ModelParams,
                        return_fields: bool = False):
    d = params.d
    ck = CoarseKernel(params)
    r = params.scale_ratio
    fine = np.kron(region, np.ones((r,) * d, bool)).astype(bool)
    cubes = np.argwhere(fine)
    shape = np.array(fine.shape)
    lo = np.zeros(3, np.int64)
    shp = np.ones(3, np.int64)
    lo[:d] = -ck.M
    shp[:d] = shape * ck.m + 2 * ck.M
    grid = QuadratureGrid(d, ck.h, params.gamma, lo, shp, False)
    # kernel mass inside the region, at every node
    inside = ck.power_field(cubes, np.full(len(cubes), params.ell_minus**d), grid, npow=1)[0]
    u = rho_s * (1.0 - inside)  # J * (rho 1_{region^c})
    # small-cube index of every node; nodes beyond the array lie in the complement
    axes = [np.floor_divide(np.arange(shp[a]) + lo[a], ck.m) for a in range(d)]
    idx = np.meshgrid(*axes, indexing="ij")
    ok = np.ones(idx[0].shape, bool)
    for a in range(d):
        ok &= (idx[a] >= 0) & (idx[a] < shape[a])
    member = np.zeros(idx[0].shape, bool)
    member[ok] = fine[tuple(i[ok] for i in idx)]
    member = member.reshape(shp.tolist())
    integrand = np.where(member, -e_lambda(u, lam), e_lambda(rho_s, lam) - e_lambda(u, lam))
    value = grid.weight * float(integrand.sum())
    if return_fields:
        return value, (grid, member, integrand)
    return value


def surface_term_I(region, sign: int, params: ModelParams, meanfield, richardson: bool = True,
                   return_fields: bool = False):
    """``I(region)`` for the ``sign`` phase at the coexistence chemical potential.

    ``region`` is a boolean mask of large cubes; every cube outside the mask
    (including everything beyond the array) belongs to the complement.  The
    integrals run over the quadrature lattice; with ``richardson`` the
    results at ``quad_factor`` and twice that are combined to cancel the
    ``h^2`` term of the midpoint rule.
    """
    region = np.asarray(region, bool)
    if region.ndim != params.d:
        raise ValueError("region mask must have one axis per dimension")
    rho_s = meanfield.rho_plus if sign > 0 else meanfield.rho_minus
    lam = meanfield.lambda_coex
    if not region.any():
        # the complement is everything: J * rho = rho and the integrand vanishes
        return (0.0, None) if return_fields else 0.0
    coarse = _surface_on_lattice(region, rho_s, lam, params, return_fields)
    if not richardson or return_fields:
        return coarse
    fine_params = params.replace(quad_factor=2 * params.quad_factor)
    m0, m1 = params.nodes_per_cube, fine_params.nodes_per_cube
    fine = _surface_on_lattice(region, rho_s, lam, fine_params)
    k = (m1 / m0) ** 2
    return (k * fine - coarse) / (k - 1.0)
