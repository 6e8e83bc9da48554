"""Single-site couplings of the coarse-grained model and a uniqueness check.

The coarse-grained Gibbs measure lives on occupation numbers ``n_x``
restricted to a window around a pure-phase density.  For one site ``x`` the
conditional law given the rest is

    p(n_x | rest) ∝ exp(-[h({n_x, rest} | qbar) - h(rest | qbar)]),

with ``h`` the effective Hamiltonian of :mod:`lmphc.effective_ham`.
Perturbing the rest at a single site ``z`` moves this law by a Vaserstein
(W1) amount; the worst ratio over probe perturbations estimates the
coefficient ``r(x, z)``, and ``u = max_x sum_z r(x, z) < 1`` is the
uniqueness criterion.  :func:`compare_geometries` estimates the same
boundary-memory effect directly with the particle sampler.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .coarse_grain.fields import eta_window
from .effective_ham import DensityConfig, assemble_h
from .model.domain import Domain
from .model.params import ModelParams
from .sampler.state import GCMCSampler

log = logging.getLogger(__name__)

NORM_TOL = 1e-12


class UnderflowError(FloatingPointError):
    """All conditional weights vanish even after rescaling."""


class InsufficientStatistics(RuntimeError):
    """A sampler comparison is too noisy to resolve the requested quantity."""


# ---------------------------------------------------------------------------
# distributions on integer ranges
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DiscreteDistribution:
    """Probabilities on the contiguous integer range ``[n_min, n_max]``."""

    n_min: int
    probs: np.ndarray
    restricted: bool = False
    window: tuple | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).ravel()
        if len(p) == 0:
            raise ValueError("empty support")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "n_min", int(self.n_min))
        object.__setattr__(self, "probs", p)
        if self.restricted:
            lo, hi = self.window
            if self.n_min < lo or self.n_max > hi:
                raise ValueError(f"support [{self.n_min}, {self.n_max}] leaves the window {self.window}")

    @classmethod
    def from_log_weights(cls, n_min: int, log_w, **kw) -> "DiscreteDistribution":
        """Normalize ``exp(log_w)``; retries with a max shift before giving up."""
        lw = np.asarray(log_w, dtype=float)
        with np.errstate(over="ignore", under="ignore"):
            w = np.exp(lw)
        total = w.sum()
        if not (np.isfinite(total) and total > 0):
            top = np.max(lw)
            if not np.isfinite(top):
                raise UnderflowError("every conditional weight is zero")
            w = np.exp(lw - top)
            total = w.sum()
        p = w / total
        p = p / p.sum()
        return cls(n_min, p, **kw)

    @classmethod
    def point_mass(cls, n: int) -> "DiscreteDistribution":
        return cls(n, np.ones(1))

    @property
    def n_max(self) -> int:
        return self.n_min + len(self.probs) - 1

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1)

    def mean(self) -> float:
        return float(self.support @ self.probs)

    def on_range(self, lo: int, hi: int) -> np.ndarray:
        """Probabilities padded with zeros to ``[lo, hi]``."""
        out = np.zeros(hi - lo + 1)
        out[self.n_min - lo:self.n_max - lo + 1] = self.probs
        return out


def _support_probs(p) -> tuple[int, np.ndarray]:
    if isinstance(p, DiscreteDistribution):
        return p.n_min, p.probs
    n_min, probs = p
    return int(n_min), np.asarray(probs, dtype=float).ravel()


def vaserstein_1d(p1, p2) -> float:
    """W1 distance with cost ``|n1 - n2|``: the sum of absolute CDF differences.

    Arguments are :class:`DiscreteDistribution` objects or raw
    ``(n_min, probs)`` pairs.
    """
    (a0, a), (b0, b) = _support_probs(p1), _support_probs(p2)
    for q in (a, b):
        if np.any(q < 0) or abs(q.sum() - 1.0) > NORM_TOL:
            raise ValueError("vaserstein_1d needs normalized non-negative distributions")
    lo, hi = min(a0, b0), max(a0 + len(a), b0 + len(b)) - 1
    fa, fb = np.zeros(hi - lo + 1), np.zeros(hi - lo + 1)
    fa[a0 - lo:a0 - lo + len(a)] = a
    fb[b0 - lo:b0 - lo + len(b)] = b
    diff = np.cumsum(fa) - np.cumsum(fb)
    return float(np.sum(np.abs(diff[:-1])))


# ---------------------------------------------------------------------------
# boundary discrepancy
# ---------------------------------------------------------------------------
def _in_cube(points: np.ndarray, z, ell: float) -> np.ndarray:
    lo = np.asarray(z, dtype=float) * ell
    return points[np.all((points >= lo) & (points < lo + ell), axis=1)]


def _point_set(q) -> np.ndarray:
    if q is None or np.size(q) == 0:
        return np.zeros((0, 1))
    return np.atleast_2d(np.asarray(q, dtype=float))


def discrepancy(q_bar1, q_bar2, z=None, ell: float | None = None) -> int:
    """``D_z = p + (n - largest number of exactly coinciding pairs)``.

    ``q_bar1`` has ``n`` points and ``q_bar2`` has ``n + p``; the arguments are
    swapped when the first is the larger one.  With ``z`` and ``ell`` given,
    only the points inside the cube ``z`` are compared.
    """
    a, b = _point_set(q_bar1), _point_set(q_bar2)
    if len(a) and len(b) and a.shape[1] != b.shape[1]:
        raise ValueError("point sets of different dimension")
    if z is not None:
        if ell is None:
            raise ValueError("restricting to a cube needs its side ell")
        a, b = (_in_cube(x, z, ell) if len(x) else x for x in (a, b))
    if len(a) > len(b):
        a, b = b, a
    n, p = len(a), len(b) - len(a)
    if n == 0:
        return p
    same = np.all(a[:, None, :] == b[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(same, maximize=True)
    return int(p + n - same[rows, cols].sum())


# ---------------------------------------------------------------------------
# conditional measures
# ---------------------------------------------------------------------------
def restricted_window(params: ModelParams, meanfield, phase: str = "plus") -> tuple[int, int]:
    """Occupation-number window ``ell^d (rho_s ± zeta)`` of the restricted ensemble.

    ``meanfield`` is a coexistence solution, or a plain density used as the
    window centre (useful above the critical temperature).
    """
    if isinstance(meanfield, (int, float)):
        rho_s = float(meanfield)
    elif phase == "plus":
        rho_s = meanfield.rho_plus
    elif phase == "minus":
        rho_s = meanfield.rho_minus
    else:
        raise ValueError("phase must be 'plus' or 'minus'")
    return eta_window(rho_s, params.zeta, params.ell_minus, params.d)


def interaction_reach(params: ModelParams, cluster_order: int = 0) -> float:
    """Cube gap beyond which a site cannot influence another site's conditional law.

    ``h0`` couples cubes closer than ``2/gamma``; every extra link of a
    truncated cluster expansion can stretch this by ``2/gamma + R``.
    """
    step = 2.0 / params.gamma + params.hc_radius
    return (1 + cluster_order) * step if params.kac or cluster_order else 0.0


def cube_gap(x, z, ell: float) -> float:
    """Euclidean distance between the closed cubes with integer indices ``x`` and ``z``."""
    dx = np.maximum(np.abs(np.asarray(x) - np.asarray(z)) - 1, 0) * ell
    return float(np.sqrt(np.sum(dx * dx)))


def _default_h(q_bar, params: ModelParams, hp_provider, hc_provider, resolution: int):
    return lambda rho: assemble_h(rho, q_bar, params, hp_provider, hc_provider,
                                  boundary_resolution=resolution)


def conditional_measure(x, rho_rest: DensityConfig, q_bar, params: ModelParams,
                        hp_provider: Callable | None = None, *, window: tuple[int, int] | None = None,
                        meanfield=None, phase: str = "plus", hc_provider: Callable | None = None,
                        h: Callable | None = None, cluster_order: int = 0,
                        boundary_resolution: int = 64) -> DiscreteDistribution:
    """Law of ``n_x`` given the occupation numbers elsewhere.

    The window is either given directly or derived from ``meanfield`` and
    ``phase``.  ``h`` replaces the effective Hamiltonian by an arbitrary
    function of a :class:`DensityConfig`; by default it is
    :func:`assemble_h` with the given providers (``h^c`` is off unless
    ``hc_provider`` is passed).  Sites of ``rho_rest`` farther than
    :func:`interaction_reach` are dropped, so the result does not depend on
    them at all.
    """
    x = tuple(int(v) for v in np.atleast_1d(x))
    if window is None:
        if meanfield is None:
            raise ValueError("give either a window or a meanfield solution")
        window = restricted_window(params, meanfield, phase)
    lo, hi = int(window[0]), int(window[1])
    if hi < lo:
        raise ValueError(f"empty window {window}")
    ell = params.ell_minus
    reach = interaction_reach(params, cluster_order)
    if h is None:
        h = _default_h(q_bar, params, hp_provider, hc_provider, boundary_resolution)
    keep = [i for i, c in enumerate(rho_rest.cubes)
            if tuple(c) != x and cube_gap(c, x, ell) <= reach and rho_rest.counts[i] > 0]
    cubes = rho_rest.cubes[keep].reshape(-1, len(x))
    counts = rho_rest.counts[keep]
    base = h(DensityConfig(cubes, counts))
    all_cubes = np.vstack([cubes, np.array(x, dtype=np.int64)[None]])
    log_w = np.empty(hi - lo + 1)
    for k, n in enumerate(range(lo, hi + 1)):
        log_w[k] = -(h(DensityConfig(all_cubes, np.append(counts, n))) - base)
    return DiscreteDistribution.from_log_weights(lo, log_w, restricted=True, window=(lo, hi))


# ---------------------------------------------------------------------------
# Dobrushin coefficients
# ---------------------------------------------------------------------------
@dataclass
class DobrushinContext:
    """Everything a coefficient evaluation needs besides ``x``, ``z`` and the parameters.

    ``rest`` holds the reference occupation numbers on the probe lattice;
    the perturbed site's count is overwritten by the probe values.
    ``n_probes`` values of ``n_z`` are taken (window endpoints and
    equally spaced interior points) and all distinct pairs compared.
    """

    rest: DensityConfig
    window: tuple[int, int]
    q_bar: np.ndarray | None = None
    hp_provider: Callable | None = None
    hc_provider: Callable | None = None
    h: Callable | None = None
    cluster_order: int = 0
    n_probes: int = 3
    boundary_resolution: int = 64

    def probe_values(self) -> list[int]:
        lo, hi = self.window
        k = max(2, int(self.n_probes))
        return sorted({int(round(v)) for v in np.linspace(lo, hi, k)})

    def with_site(self, z, n: int) -> DensityConfig:
        z = tuple(int(v) for v in np.atleast_1d(z))
        cubes = [tuple(c) for c in self.rest.cubes]
        counts = list(self.rest.counts)
        if z in cubes:
            counts[cubes.index(z)] = n
        else:
            cubes.append(z)
            counts.append(n)
        return DensityConfig(np.array(cubes, dtype=np.int64).reshape(-1, len(z)), np.array(counts))


def dobrushin_coefficient(x, z, params: ModelParams, context: DobrushinContext) -> float:
    """Probe estimate of ``r(x, z)``: the largest ``W1(p1, p2) / |n_z^1 - n_z^2|``.

    This is a lower bound on the true supremum over rest configurations.
    """
    x = tuple(int(v) for v in np.atleast_1d(x))
    z = tuple(int(v) for v in np.atleast_1d(z))
    if x == z:
        raise ValueError("z must differ from x")
    if cube_gap(x, z, params.ell_minus) > interaction_reach(params, context.cluster_order):
        return 0.0
    values = context.probe_values()
    measures = {n: conditional_measure(x, context.with_site(z, n), context.q_bar, params,
                                       context.hp_provider, window=context.window,
                                       hc_provider=context.hc_provider, h=context.h,
                                       cluster_order=context.cluster_order,
                                       boundary_resolution=context.boundary_resolution)
                for n in values}
    best, used = 0.0, 0
    for i, n1 in enumerate(values):
        for n2 in values[i + 1:]:
            used += 1
            best = max(best, vaserstein_1d(measures[n1], measures[n2]) / abs(n1 - n2))
    log.debug("r(%s, %s) from %d probe pairs: %g", x, z, used, best)
    return best


@dataclass(frozen=True)
class DecayFit:
    """``r ≈ c1 exp(-c2 s)`` with ``s`` measured in units of ``1/gamma``."""

    c1: float
    c2: float
    n_points: int


def fit_decay(distances, values) -> DecayFit | None:
    """Least-squares line through ``(s, log r)`` over the positive values."""
    s = np.asarray(distances, dtype=float)
    r = np.asarray(values, dtype=float)
    ok = r > 0
    if len(np.unique(s[ok])) < 2:
        return None
    slope, intercept = np.polyfit(s[ok], np.log(r[ok]), 1)
    return DecayFit(float(math.exp(intercept)), float(-slope), int(ok.sum()))


@dataclass
class CouplingReport:
    """Outcome of :func:`uniqueness_check`."""

    r: dict  # (x, z) -> coefficient
    row_sums: dict  # x -> sum_z r(x, z)
    u: float
    fit: DecayFit | None
    probes_per_pair: int
    caveat: str
    w1: float | None = None
    coupling: np.ndarray | None = field(default=None, repr=False)

    @property
    def verdict(self) -> bool:
        return self.u < 1.0

    def to_json(self) -> str:
        doc = {
            "u": self.u,
            "verdict": self.verdict,
            "row_sums": [{"x": list(x), "sum": v} for x, v in self.row_sums.items()],
            "r": [{"x": list(x), "z": list(z), "r": v} for (x, z), v in self.r.items()],
            "fit": None if self.fit is None else {"c1": self.fit.c1, "c2": self.fit.c2,
                                                  "n_points": self.fit.n_points},
            "probes_per_pair": self.probes_per_pair,
            "caveat": self.caveat,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def uniqueness_check(lattice, params: ModelParams, context: DobrushinContext,
                     jobs: int = 1) -> CouplingReport:
    """Evaluate ``r(x, z)`` for all ordered pairs of a finite probe lattice.

    ``u`` is the largest row sum; the decay fit uses the Euclidean distance
    between cube centres in units of ``1/gamma``.  Sites outside the lattice
    and the boundary-discrepancy terms are not included, which the caveat
    states.
    """
    sites = [tuple(int(v) for v in np.atleast_1d(c)) for c in np.atleast_2d(lattice)]
    pairs = [(x, z) for x in sites for z in sites if x != z]
    fn = lambda xz: dobrushin_coefficient(xz[0], xz[1], params, context)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            values = list(pool.map(fn, pairs))
    else:
        values = [fn(xz) for xz in pairs]
    r = dict(zip(pairs, values))
    row_sums = {x: float(sum(r[(x, z)] for z in sites if z != x)) for x in sites}
    u = max(row_sums.values()) if row_sums else 0.0
    dist = [params.gamma * params.ell_minus * math.dist(x, z) for x, z in pairs]
    n_pairs = len(context.probe_values())
    caveat = (f"coefficients are probe lower bounds ({n_pairs * (n_pairs - 1) // 2} probe pairs "
              f"per site pair); sites outside the {len(sites)}-site lattice and boundary "
              "discrepancy terms are not included")
    return CouplingReport(r, row_sums, float(u), fit_decay(dist, values),
                          n_pairs * (n_pairs - 1) // 2, caveat)


# ---------------------------------------------------------------------------
# box versus torus
# ---------------------------------------------------------------------------
@dataclass
class GeometryComparison:
    """Box-minus-torus occupation differences binned by distance to the box complement."""

    distance: np.ndarray
    difference: np.ndarray
    sigma: np.ndarray
    box_mean: np.ndarray
    reference_mean: np.ndarray
    fit: DecayFit | None
    upper_bound: float | None

    @property
    def noise_dominated(self) -> bool:
        return self.fit is None

    def to_csv(self) -> str:
        rows = ["distance,difference,sigma"]
        rows += [f"{s!r},{v!r},{e!r}" for s, v, e in
                 zip(map(float, self.distance), map(float, self.difference), map(float, self.sigma))]
        return "\n".join(rows) + "\n"


def _distance_to_complement(cube, n_minus: int, ell: float) -> float:
    c = np.asarray(cube)
    return float(np.min(np.minimum(c, n_minus - 1 - c)) * ell)


def _batch_means(series: np.ndarray, n_batches: int) -> tuple[np.ndarray, np.ndarray]:
    """Means and standard errors of each column from ``n_batches`` contiguous batches."""
    t = len(series) // n_batches * n_batches
    if t < n_batches:
        raise InsufficientStatistics("fewer recorded samples than batches")
    b = series[:t].reshape(n_batches, -1, *series.shape[1:]).mean(axis=1)
    return b.mean(axis=0), b.std(axis=0, ddof=1) / math.sqrt(n_batches)


def _binned_series(params: ModelParams, domain: Domain, offset: int, bins: list[np.ndarray],
                   seed: int, n_steps: int, record_every: int, burn_in: int, initial,
                   max_particles) -> np.ndarray:
    s = GCMCSampler(params, domain, seed=seed, initial=initial, max_particles=max_particles)
    s.step(burn_in)
    out = np.empty((n_steps // record_every, len(bins)))
    d = params.d
    for t in range(len(out)):
        s.step(record_every)
        c = s.counts
        for k, cubes in enumerate(bins):
            idx = tuple((cubes + offset).T[:d])
            out[t, k] = c[idx].mean()
    return out


def compare_geometries(params: ModelParams, n_plus: int, seeds=(0,), n_steps: int = 200_000,
                       record_every: int = 200, burn_in: int = 20_000, torus_factor: int = 3,
                       boundary=None, reference: str = "torus", n_batches: int = 10,
                       max_particles: int | None = None, signal_sigmas: float = 3.0
                       ) -> GeometryComparison:
    """Compare small-cube occupations in a box with those in a larger torus.

    The box ``[0, L)^d`` (``L = n_plus ell_+``, boundary particles
    ``boundary``) sits inside a torus of side ``torus_factor L``.  Cubes of
    the box are grouped by their distance to the complement of the box; for
    each group the mean count per cube is estimated in both geometries with
    batch-means errors, averaged over ``seeds``.  ``reference="box"`` reruns
    the box itself with shifted seeds as a null comparison.  A decay law is
    fitted only to groups whose difference exceeds ``signal_sigmas`` errors;
    otherwise ``upper_bound`` bounds the difference at the largest distance.
    """
    if torus_factor < 3 and reference == "torus":
        raise ValueError("the torus must be at least three times larger than the box")
    d, ell = params.d, params.ell_minus
    box = Domain.from_params(params, "box", n_plus=n_plus, boundary=boundary)
    n_minus = int(round(box.side / ell))
    cubes = np.array(list(np.ndindex(*(n_minus,) * d)))
    dist = np.array([_distance_to_complement(c, n_minus, ell) for c in cubes])
    levels = np.unique(dist)
    bins = [cubes[dist == v] for v in levels]
    if reference == "torus":
        ref = Domain.from_params(params, "torus", n_plus=torus_factor * n_plus)
        offset = (torus_factor // 2) * n_minus
        ref_seeds = [s + 1_000_003 for s in seeds]
    elif reference == "box":
        ref, offset = box, 0
        ref_seeds = [s + 7_919 for s in seeds]
    else:
        raise ValueError("reference must be 'torus' or 'box'")
    kw = dict(n_steps=n_steps, record_every=record_every, burn_in=burn_in, initial=None,
              max_particles=max_particles)
    means, errs = [], []
    for dom, off, ss in ((box, 0, seeds), (ref, offset, ref_seeds)):
        m, e = zip(*(_batch_means(_binned_series(params, dom, off, bins, s, **kw), n_batches)
                     for s in ss))
        means.append(np.mean(m, axis=0))
        errs.append(np.sqrt(np.sum(np.square(e), axis=0)) / len(ss))
    diff = means[0] - means[1]
    sigma = np.sqrt(errs[0] ** 2 + errs[1] ** 2)
    strong = np.abs(diff) > signal_sigmas * sigma
    fit = fit_decay(levels[strong] * params.gamma, np.abs(diff[strong])) if strong.sum() >= 2 else None
    upper = None if fit is not None else float(abs(diff[-1]) + signal_sigmas * sigma[-1])
    return GeometryComparison(levels, diff, sigma, means[0], means[1], fit, upper)
