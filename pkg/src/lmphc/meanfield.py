"""Mean-field thermodynamics of the LMP model with a hard core.

The canonical free energy is

    phi(rho) = e_0(rho) + (1/beta) [rho (log rho - 1) + B2 rho^2 + B3 rho^3]

with the hard-sphere virial series truncated after ``B2 = eps/2`` (and
optionally ``B3``), ``eps`` being the exclusion volume ``V_d(R)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .model.params import ball_volume

#: ``B3 / B2^2`` for hard spheres (exclusion at distance R) in d = 1, 2, 3.
B3_OVER_B2SQ = {1: 1.0, 2: 4.0 / 3.0 - math.sqrt(3.0) / math.pi, 3: 5.0 / 8.0}

BETA_C_LMP = 1.5**1.5
RHO_C_LMP = math.sqrt(2.0 / 3.0)


class NoTransitionError(ValueError):
    """Raised when beta does not exceed the critical inverse temperature."""


class BracketError(RuntimeError):
    """A root-finding bracket failed to change sign."""


# ---------------------------------------------------------------- energy density
def e_lambda(rho, lam: float = 0.0):
    rho = np.asarray(rho, dtype=float)
    r2 = rho * rho
    out = -lam * rho - 0.5 * r2 + r2 * r2 / 24.0
    return float(out) if out.ndim == 0 else out


def e_lambda_prime(rho, lam: float = 0.0):
    return -lam - rho + rho**3 / 6.0


@dataclass(frozen=True)
class FreeEnergySpec:
    """Parameters of ``phi``; ``epsilon`` overrides the value computed from ``R``."""

    beta: float
    hc_radius: float = 0.0
    d: int = 2
    virial_order: int = 2
    lam: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if self.virial_order not in (2, 3):
            raise ValueError("virial_order must be 2 or 3")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def eps(self) -> float:
        return ball_volume(self.d, self.hc_radius) if self.epsilon is None else self.epsilon

    @property
    def b2(self) -> float:
        return 0.5 * self.eps

    @property
    def b3(self) -> float:
        return B3_OVER_B2SQ[self.d] * self.b2**2 if self.virial_order == 3 else 0.0

    @property
    def rho_max(self) -> float:
        """Density guard: virial truncation is not trusted beyond ``rho*eps = 0.8``."""
        return 50.0 if self.eps == 0.0 else min(50.0, 0.8 / self.eps)

    def with_beta(self, beta: float) -> "FreeEnergySpec":
        return FreeEnergySpec(beta, self.hc_radius, self.d, self.virial_order, self.lam, self.epsilon)

    def with_lam(self, lam: float | None) -> "FreeEnergySpec":
        return FreeEnergySpec(self.beta, self.hc_radius, self.d, self.virial_order, lam, self.epsilon)


def _check_rho(rho, spec: FreeEnergySpec):
    arr = np.asarray(rho, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr > spec.rho_max):
        raise ValueError(f"density outside (0, {spec.rho_max:g}]")
    return arr


def phi(rho, spec: FreeEnergySpec):
    """Free energy density; subtracts ``lam * rho`` when ``spec.lam`` is set."""
    r = _check_rho(rho, spec)
    ent = r * (np.log(r) - 1.0) + spec.b2 * r**2 + spec.b3 * r**3
    out = e_lambda(r, spec.lam or 0.0) + ent / spec.beta
    return float(out) if np.ndim(out) == 0 else out


def phi_prime(rho, spec: FreeEnergySpec):
    r = np.asarray(rho, dtype=float)
    return e_lambda_prime(r, spec.lam or 0.0) + (np.log(r) + 2 * spec.b2 * r + 3 * spec.b3 * r**2) / spec.beta


def phi_second(rho, spec: FreeEnergySpec):
    r = np.asarray(rho, dtype=float)
    return -1.0 + 0.5 * r**2 + (1.0 / r + 2 * spec.b2 + 6 * spec.b3 * r) / spec.beta


def phi_third(rho, spec: FreeEnergySpec):
    r = np.asarray(rho, dtype=float)
    return r + (-1.0 / r**2 + 6 * spec.b3) / spec.beta


# ---------------------------------------------------------------- fixed-point map
def k_map(rho, beta: float, R: float = 0.0, lam: float = 0.0, d: int = 2,
          virial_order: int = 2, epsilon: float | None = None):
    """``K(rho) = exp{-beta (e_lambda'(rho) + psi'(rho))}`` with ``beta psi = B2 rho^2 (+ B3 rho^3)``."""
    spec = FreeEnergySpec(beta, R, d, virial_order, lam, epsilon)
    r = np.asarray(rho, dtype=float)
    expo = -beta * e_lambda_prime(r, lam) - (2 * spec.b2 * r + 3 * spec.b3 * r**2)
    return np.exp(expo)


def k_map_prime(rho, beta: float, R: float = 0.0, lam: float = 0.0, d: int = 2,
                virial_order: int = 2, epsilon: float | None = None):
    """Analytic derivative of :func:`k_map`."""
    spec = FreeEnergySpec(beta, R, d, virial_order, lam, epsilon)
    r = np.asarray(rho, dtype=float)
    dexpo = -beta * (-1.0 + 0.5 * r**2) - (2 * spec.b2 + 6 * spec.b3 * r)
    return k_map(r, beta, R, lam, d, virial_order, epsilon) * dexpo


def kprime_at_fixed_point(rho, spec: FreeEnergySpec):
    """At a fixed point ``K(rho) = rho`` one has ``K' = 1 - beta rho phi''``."""
    return 1.0 - spec.beta * rho * phi_second(rho, spec)


# ---------------------------------------------------------------- critical point
def _spec(R, d, virial_order, epsilon, beta=1.0):
    return FreeEnergySpec(beta, R, d, virial_order, None, epsilon)


def critical_point(R: float = 0.0, d: int = 2, virial_order: int = 2,
                   epsilon: float | None = None) -> tuple[float, float]:
    """``(beta_c, rho_c)`` solving ``phi'' = phi''' = 0``.

    Eliminating beta with ``phi''' = 0`` (``beta rho^3 = 1 - 6 B3 rho^2``)
    leaves ``3 B3 rho^4 + 2 B2 rho^3 + (3/2 + 6 B3) rho^2 - 1 = 0``.
    """
    s = _spec(R, d, virial_order, epsilon)
    b2, b3 = s.b2, s.b3
    if s.eps > 0.1:
        raise ValueError("epsilon above the supported range (<= 0.1)")
    f = lambda r: 3 * b3 * r**4 + 2 * b2 * r**3 + (1.5 + 6 * b3) * r**2 - 1.0
    rho_c = brentq(f, 1e-6, RHO_C_LMP + 1e-9, xtol=1e-15, rtol=1e-15)
    for _ in range(2):
        df = 12 * b3 * rho_c**3 + 6 * b2 * rho_c**2 + 2 * (1.5 + 6 * b3) * rho_c
        rho_c -= f(rho_c) / df
    beta_c = (1.0 - 6 * b3 * rho_c**2) / rho_c**3
    return beta_c, rho_c


def find_beta_c(R: float = 0.0, d: int = 2, virial_order: int = 2,
                epsilon: float | None = None) -> float:
    """Critical inverse temperature; ``(3/2)^{3/2}`` without hard core."""
    return critical_point(R, d, virial_order, epsilon)[0]


# ---------------------------------------------------------------- spinodals
def inflection_points(beta: float, R: float = 0.0, d: int = 2, virial_order: int = 2,
                      epsilon: float | None = None) -> tuple[float, float]:
    """The two positive roots ``s_- < s_+`` of ``phi'' = 0``.

    ``rho beta phi'' = 0`` is the cubic ``(beta/2) r^3 + 6 B3 r^2 + (2 B2 - beta) r + 1``.
    """
    s = _spec(R, d, virial_order, epsilon, beta)
    beta_c, rho_c = critical_point(R, d, virial_order, epsilon)
    if beta < beta_c - 1e-12:
        raise NoTransitionError(f"beta={beta} is below beta_c={beta_c}")
    if beta <= beta_c + 1e-12:
        return rho_c, rho_c
    roots = np.roots([0.5 * beta, 6 * s.b3, 2 * s.b2 - beta, 1.0])
    real = np.sort(roots[(np.abs(roots.imag) < 1e-9) & (roots.real > 0)].real)
    if len(real) < 2:
        return rho_c, rho_c
    lo, hi = real[0], real[1]
    # polish against phi'' itself inside brackets split at rho_c
    f = lambda r: float(phi_second(r, s))
    try:
        lo = brentq(f, max(lo * 0.5, 1e-12), rho_c, xtol=1e-15) if f(rho_c) < 0 else lo
        hi = brentq(f, rho_c, hi * 1.5 + 1e-3, xtol=1e-15) if f(rho_c) < 0 else hi
    except ValueError:
        pass
    return float(lo), float(hi)


# ---------------------------------------------------------------- coexistence
@dataclass(frozen=True)
class MeanFieldSolution:
    beta: float
    R: float
    epsilon: float
    lambda_coex: float
    rho_minus: float
    rho_plus: float
    rho_zero: float
    s_minus: float
    s_plus: float
    kprime_minus: float
    kprime_plus: float

    def as_dict(self) -> dict:
        return asdict(self)


def _minimizers(lam: float, s: FreeEnergySpec, s_lo: float, s_hi: float):
    """Local minimizers of ``phi - lam rho`` on either side of the spinodal region."""
    f = lambda r: float(phi_prime(r, s)) - lam
    tiny = 1e-300
    r_minus = brentq(f, tiny, s_lo, xtol=1e-16, rtol=1e-15, maxiter=500)
    r_plus = brentq(f, s_hi, s.rho_max, xtol=1e-15, rtol=1e-15, maxiter=500)
    return r_minus, r_plus


def find_coexistence(beta: float, R: float = 0.0, d: int = 2, virial_order: int = 2,
                     epsilon: float | None = None) -> MeanFieldSolution:
    """Chemical potential with two equal minima, and the associated densities.

    ``g(lam) = phi_lam(rho_+) - phi_lam(rho_-)`` decreases strictly
    (``g' = rho_- - rho_+``), so bracketing on the spinodal slopes is safe;
    a Newton polish follows.
    """
    s = _spec(R, d, virial_order, epsilon, beta)
    beta_c = find_beta_c(R, d, virial_order, epsilon)
    if beta <= beta_c:
        raise NoTransitionError(f"beta={beta} <= beta_c={beta_c}: no coexistence")
    s_lo, s_hi = inflection_points(beta, R, d, virial_order, epsilon)
    if s_hi >= s.rho_max:
        raise BracketError("upper spinodal beyond the density guard")
    lam_hi = float(phi_prime(s_lo, s))  # local max of phi'
    lam_lo = float(phi_prime(s_hi, s))  # local min of phi'

    def g(lam):
        rm, rp = _minimizers(lam, s, s_lo, s_hi)
        return (float(phi(rp, s)) - lam * rp) - (float(phi(rm, s)) - lam * rm)

    pad = 1e-12 * max(1.0, abs(lam_lo), abs(lam_hi))
    a, b = lam_lo + pad, lam_hi - pad
    ga, gb = g(a), g(b)
    if not (ga > 0 > gb):
        raise BracketError(f"g does not change sign on [{a}, {b}]: g(a)={ga}, g(b)={gb}")
    lam = brentq(g, a, b, xtol=1e-15, rtol=1e-15, maxiter=500)
    for _ in range(3):
        rm, rp = _minimizers(lam, s, s_lo, s_hi)
        val = g(lam)
        if val == 0.0:
            break
        lam -= val / (rm - rp)
    rm, rp = _minimizers(lam, s, s_lo, s_hi)
    f0 = lambda r: float(phi_prime(r, s)) - lam
    r0 = brentq(f0, s_lo, s_hi, xtol=1e-15)
    return MeanFieldSolution(
        beta=beta, R=R, epsilon=s.eps, lambda_coex=lam, rho_minus=rm, rho_plus=rp, rho_zero=r0,
        s_minus=s_lo, s_plus=s_hi,
        kprime_minus=float(kprime_at_fixed_point(rm, s)),
        kprime_plus=float(kprime_at_fixed_point(rp, s)),
    )


def coexistence_gap(lam: float, beta: float, R: float = 0.0, d: int = 2,
                    virial_order: int = 2, epsilon: float | None = None) -> float:
    """``phi_lam(rho_+) - phi_lam(rho_-)`` for an arbitrary ``lam`` in the spinodal window."""
    s = _spec(R, d, virial_order, epsilon, beta)
    s_lo, s_hi = inflection_points(beta, R, d, virial_order, epsilon)
    rm, rp = _minimizers(lam, s, s_lo, s_hi)
    return (float(phi(rp, s)) - lam * rp) - (float(phi(rm, s)) - lam * rm)


@dataclass(frozen=True)
class Beta0Result:
    beta_0: float
    capped: bool


def _min_kprime(beta, R, d, virial_order, epsilon):
    sol = find_coexistence(beta, R, d, virial_order, epsilon)
    return min(sol.kprime_minus, sol.kprime_plus)


def find_beta_0(R: float = 0.0, d: int = 2, virial_order: int = 2, epsilon: float | None = None,
                step: float = 0.05, cap: float = 40.0) -> Beta0Result:
    """Largest beta such that ``K'(rho_pm) > -1`` on all of ``(beta_c, beta]``.

    Increasing scan from just above ``beta_c`` followed by bisection on the
    first crossing of ``min K'(rho_pm) = -1``.
    """
    beta_c = find_beta_c(R, d, virial_order, epsilon)
    prev = beta_c + 1e-6
    beta = beta_c + step
    while beta <= cap:
        if _min_kprime(beta, R, d, virial_order, epsilon) <= -1.0:
            f = lambda b: _min_kprime(b, R, d, virial_order, epsilon) + 1.0
            return Beta0Result(brentq(f, prev, beta, xtol=1e-12), False)
        prev, beta = beta, beta + step
    return Beta0Result(cap, True)


def beta_c_slope(eps_values, d: int = 2, virial_order: int = 2):
    """Least-squares fit ``beta_c(eps) - beta_c(0) = slope * eps``.

    Returns ``(slope, r_squared)``.
    """
    eps = np.asarray(eps_values, dtype=float)
    base = find_beta_c(0.0, d, virial_order)
    y = np.array([find_beta_c(0.0, d, virial_order, epsilon=e) for e in eps]) - base
    slope, intercept = np.polyfit(eps, y, 1)
    resid = y - (slope * eps + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


PHASE_DIAGRAM_COLUMNS = ("beta", "R", "epsilon", "lambda_coex", "rho_minus", "rho_plus",
                         "s_minus", "s_plus", "beta_c", "beta_0", "kprime_minus", "kprime_plus")


def phase_diagram(betas, R: float = 0.0, d: int = 2, virial_order: int = 2) -> list[dict]:
    """One row per beta above ``beta_c`` with the columns of :data:`PHASE_DIAGRAM_COLUMNS`."""
    beta_c = find_beta_c(R, d, virial_order)
    beta_0 = find_beta_0(R, d, virial_order).beta_0
    rows = []
    for beta in betas:
        if beta <= beta_c:
            continue
        sol = find_coexistence(beta, R, d, virial_order)
        rows.append({
            "beta": beta, "R": R, "epsilon": sol.epsilon, "lambda_coex": sol.lambda_coex,
            "rho_minus": sol.rho_minus, "rho_plus": sol.rho_plus, "s_minus": sol.s_minus,
            "s_plus": sol.s_plus, "beta_c": beta_c, "beta_0": beta_0,
            "kprime_minus": sol.kprime_minus, "kprime_plus": sol.kprime_plus,
        })
    return rows


def unique_minimizer(lam: float, beta: float, R: float = 0.0, d: int = 2, virial_order: int = 2,
                     n_grid: int = 4001) -> float:
    """Global minimizer of ``phi - lam rho`` (dense scan, then bounded refinement)."""
    s = FreeEnergySpec(beta, R, d, virial_order, lam)
    grid = np.linspace(1e-6, min(s.rho_max, 6.0), n_grid)
    vals = phi(grid, s)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    f = lambda r: float(phi_prime(r, s))
    if f(lo) < 0 < f(hi):
        return brentq(f, lo, hi, xtol=1e-14)
    return float(grid[i])
