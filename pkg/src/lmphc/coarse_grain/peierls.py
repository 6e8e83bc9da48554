"""Monte Carlo estimates of contour weights by indicator counting.

The weight of a contour is a ratio of two probabilities under the Gibbs
measure on ``c(Gamma)`` with a pure-phase configuration frozen outside: the
contour's own eta pattern on its support, against the pure reference phase
on the support.  Both events are counted along one chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..model.domain import Domain
from ..model.params import ModelParams
from .contours import Contour
from .fields import Theta_values, cube_counts, eta_of_counts, theta_values


class InsufficientStatistics(RuntimeError):
    """The reference event was never observed."""

    def __init__(self, message, hits_numerator, hits_denominator, n_samples):
        super().__init__(f"{message} (numerator hits {hits_numerator}, denominator hits "
                         f"{hits_denominator}, samples {n_samples})")
        self.hits_numerator = hits_numerator
        self.hits_denominator = hits_denominator
        self.n_samples = n_samples


def wilson_interval(p_hat: float, n_eff: float, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a proportion with (possibly fractional) sample size."""
    if n_eff <= 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + level / 2)
    z2 = z * z
    denom = 1 + z2 / n_eff
    centre = (p_hat + z2 / (2 * n_eff)) / denom
    half = z * math.sqrt(p_hat * (1 - p_hat) / n_eff + z2 / (4 * n_eff * n_eff)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class PeierlsEstimate:
    ratio: float
    ratio_ci: tuple[float, float]
    p_numerator: float
    p_denominator: float
    ci_numerator: tuple[float, float]
    ci_denominator: tuple[float, float]
    hits_numerator: int
    hits_denominator: int
    n_samples: int
    n_eff: float
    cutoff: float | None
    weight: float

    def overlaps(self, other: "PeierlsEstimate") -> bool:
        return self.ratio_ci[0] <= other.ratio_ci[1] and other.ratio_ci[0] <= self.ratio_ci[1]


def cutoff_weight(params: ModelParams, n_gamma: int, c: float = 1.0) -> float:
    """``exp(-beta c/100 zeta^2 ell_-^d N_Gamma)``."""
    return math.exp(-params.beta * c / 100.0 * params.zeta**2 * params.ell_minus**params.d * n_gamma)


def contour_events(counts, contour: Contour, eta_gamma: np.ndarray, sign: int, params: ModelParams,
                   meanfield) -> tuple[bool, bool]:
    """(numerator event, denominator event) for small-cube occupation numbers ``counts``."""
    r = params.scale_ratio
    eta = eta_of_counts(counts, params.ell_minus, params.d, meanfield.rho_minus,
                        meanfield.rho_plus, params.zeta)
    Th = Theta_values(theta_values(eta, r))
    fine_sp = np.kron(contour.sp, np.ones((r,) * params.d, bool)).astype(bool)
    Ap, Am = contour.signed_boundary(+1), contour.signed_boundary(-1)
    A = Ap | Am
    num = (np.array_equal(eta[fine_sp], eta_gamma[fine_sp]) and np.all(Th[Ap] == 1)
           and np.all(Th[Am] == -1))
    den = bool(np.all(eta[fine_sp] == sign) and np.all(Th[A] == sign))
    return bool(num), den


def peierls_statistics(contour: Contour, sign: int, params: ModelParams, meanfield,
                       n_samples: int = 2000, thin: int = 200, burn_in: int = 20_000,
                       seed: int = 0, eta_gamma: np.ndarray | None = None, cutoff_c: float | None = None,
                       max_support: int = 4, level: float = 0.95) -> PeierlsEstimate:
    """Estimate the weight of ``contour`` under the ``sign`` boundary condition.

    The chain lives on ``c(Gamma)``; every other large cube of the contour's
    box is frozen at a lattice-like configuration of the ``sign`` phase.
    ``eta_gamma`` defaults to the eta field stored on the contour.
    """
    from ..sampler.run import integrated_autocorrelation
    from ..sampler.state import DilutedConstraint, GCMCSampler, lattice_fill

    if contour.n_gamma > max_support:
        raise ValueError(f"|sp| = {contour.n_gamma} exceeds the configured cap {max_support}")
    shape = contour.sp.shape
    if len(set(shape)) != 1:
        raise ValueError("the contour box must be a cube")
    eta_gamma = contour.eta if eta_gamma is None else np.asarray(eta_gamma)
    if eta_gamma is None:
        raise ValueError("eta on the support is required")
    d = params.d
    domain = Domain.from_params(params, "box", n_plus=shape[0])
    con = DilutedConstraint.from_meanfield(sign, meanfield, params)
    lo, hi = con.window(params)
    per_cube = int(np.clip(round(con.rho * params.ell_minus**d), lo, hi))
    full = lattice_fill(params, domain, per_cube)
    cube_idx = np.floor(full / params.ell_plus).astype(np.int64)
    in_c = contour.c[tuple(cube_idx.T)]
    sampler = GCMCSampler(params, domain, seed=seed, initial=full[in_c], frozen=full[~in_c],
                          active=contour.c)
    frozen_counts = cube_counts(full[~in_c], domain.side, params.ell_minus, d)
    sampler.step(burn_in)
    num = np.zeros(n_samples, bool)
    den = np.zeros(n_samples, bool)
    for k in range(n_samples):
        sampler.step(thin)
        num[k], den[k] = contour_events(sampler.counts + frozen_counts, contour, eta_gamma, sign,
                                        params, meanfield)
    hn, hd = int(num.sum()), int(den.sum())
    if hd == 0:
        raise InsufficientStatistics("reference event never observed", hn, hd, n_samples)
    tau = max(integrated_autocorrelation(num), integrated_autocorrelation(den))
    n_eff = n_samples / (2 * tau)
    pn, pd = hn / n_samples, hd / n_samples
    ci_n, ci_d = wilson_interval(pn, n_eff, level), wilson_interval(pd, n_eff, level)
    ratio = pn / pd
    ratio_ci = (ci_n[0] / ci_d[1], ci_n[1] / ci_d[0] if ci_d[0] > 0 else math.inf)
    r = params.scale_ratio
    fine_sp = np.kron(contour.sp, np.ones((r,) * d, bool)).astype(bool)
    if np.all(eta_gamma[fine_sp] == sign) and not contour.signed_boundary(-sign).any():
        ratio_ci = (1.0, 1.0)  # numerator and denominator are the same event
    cut = cutoff_weight(params, contour.n_gamma, cutoff_c) if cutoff_c is not None else None
    weight = min(ratio, cut) if cut is not None else ratio
    return PeierlsEstimate(ratio, ratio_ci, pn, pd, ci_n, ci_d, hn, hd, n_samples, n_eff, cut, weight)
