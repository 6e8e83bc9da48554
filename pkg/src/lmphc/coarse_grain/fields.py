"""Multi-scale partitions, empirical densities and the phase indicators eta, theta, Theta."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from ..model.domain import ParticleConfiguration
from ..model.params import ModelParams


class AmbiguousWindowError(ValueError):
    """The plus and minus acceptance windows of eta overlap."""


@dataclass(frozen=True)
class CoarseGrid:
    """Counts per cube of side ``ell`` tiling the box ``[0, side)^d``."""

    ell: float
    counts: np.ndarray  # integer array of shape (n,)*d

    @property
    def d(self) -> int:
        return self.counts.ndim

    @property
    def shape(self) -> tuple:
        return self.counts.shape

    def centers(self) -> np.ndarray:
        idx = np.stack(np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij"), -1)
        return (idx + 0.5) * self.ell

    def densities(self) -> np.ndarray:
        return self.counts / self.ell**self.d

    def coarsen(self, ratio: int) -> "CoarseGrid":
        """Aggregate ``ratio^d`` blocks into the next scale."""
        shape = []
        for s in self.shape:
            if s % ratio:
                raise ValueError("grid does not refine the coarser scale exactly")
            shape += [s // ratio, ratio]
        agg = self.counts.reshape(shape).sum(axis=tuple(range(1, 2 * self.d, 2)))
        return CoarseGrid(self.ell * ratio, agg)


def cube_counts(positions, side: float, ell: float, d: int) -> np.ndarray:
    """Occupation numbers of the cubes of side ``ell`` partitioning ``[0, side)^d``."""
    n = int(round(side / ell))
    pos = np.asarray(positions, dtype=float).reshape(-1, d)
    if len(pos) == 0:
        return np.zeros((n,) * d, np.int64)
    idx = np.clip(np.floor(pos / ell).astype(np.int64), 0, n - 1)
    counts = np.zeros((n,) * d, np.int64)
    np.add.at(counts, tuple(idx.T), 1)
    return counts


def coarse_grid(q: ParticleConfiguration, scale: str = "minus") -> CoarseGrid:
    p = q.params
    ell = p.ell_minus if scale == "minus" else p.ell_plus
    return CoarseGrid(ell, cube_counts(q.positions, q.domain.side, ell, p.d))


def empirical_density(q: ParticleConfiguration, ell: float, cube) -> float:
    """``|C ∩ q| / ell^d`` for the cube with integer index ``cube`` (or a point inside it)."""
    cube = np.asarray(cube)
    if np.issubdtype(cube.dtype, np.floating):
        cube = np.floor(cube / ell).astype(np.int64)
    lo = cube * ell
    inside = np.all((q.positions >= lo) & (q.positions < lo + ell), axis=1)
    return float(np.count_nonzero(inside)) / ell**q.params.d


def eta_of_counts(counts, ell: float, d: int, rho_minus: float, rho_plus: float,
                  zeta: float) -> np.ndarray:
    """Per-cube phase indicator from occupation numbers (``<= zeta`` inclusive)."""
    if zeta >= 0.5 * (rho_plus - rho_minus):
        raise AmbiguousWindowError(
            f"zeta={zeta} >= (rho_+ - rho_-)/2 = {0.5 * (rho_plus - rho_minus)}")
    rho = np.asarray(counts, dtype=float) / ell**d
    eta = np.zeros(rho.shape, np.int8)
    eta[np.abs(rho - rho_plus) <= zeta] = 1
    eta[np.abs(rho - rho_minus) <= zeta] = -1
    return eta


def eta_window(rho_s: float, zeta: float, ell: float, d: int) -> tuple[int, int]:
    """Inclusive integer window ``[n_lo, n_hi]`` of counts with eta = sign of ``rho_s``.

    Uses the same floating comparison as :func:`eta_of_counts`.
    """
    vol = ell**d
    centre = int(round(rho_s * vol))
    ok = lambda n: abs(n / vol - rho_s) <= zeta
    lo = hi = None
    top = int(np.ceil((rho_s + zeta) * vol)) + 2
    members = [n for n in range(0, top + 1) if ok(n)]
    if not members:
        raise ValueError(f"no occupation number satisfies eta at density {rho_s} (centre {centre})")
    lo, hi = members[0], members[-1]
    return lo, hi


@dataclass(frozen=True)
class PhaseField:
    """Indicator values in {-1, 0, +1} per cube at a given scale."""

    level: str
    scale: float
    values: np.ndarray

    def __post_init__(self):
        if self.level not in ("eta", "theta", "Theta"):
            raise ValueError("level must be eta, theta or Theta")


def eta_field(q: ParticleConfiguration, params: ModelParams, meanfield) -> PhaseField:
    counts = cube_counts(q.positions, q.domain.side, params.ell_minus, params.d)
    vals = eta_of_counts(counts, params.ell_minus, params.d, meanfield.rho_minus,
                         meanfield.rho_plus, params.zeta)
    return PhaseField("eta", params.ell_minus, vals)


def _block_reduce(values: np.ndarray, ratio: int, fn) -> np.ndarray:
    d = values.ndim
    shape = []
    for s in values.shape:
        shape += [s // ratio, ratio]
    return fn(values.reshape(shape), axis=tuple(range(1, 2 * d, 2)))


def theta_values(eta: np.ndarray, ratio: int) -> np.ndarray:
    """theta = s on a large cube iff every small sub-cube has eta = s."""
    lo = _block_reduce(eta, ratio, np.min)
    hi = _block_reduce(eta, ratio, np.max)
    out = np.zeros(lo.shape, np.int8)
    agree = lo == hi
    out[agree] = lo[agree]
    return out


def Theta_values(theta: np.ndarray, outside: int | None = None) -> np.ndarray:
    """Theta = s iff theta = s on the cube and on its 3^d - 1 neighbours.

    Cubes beyond the array are treated as carrying ``outside`` (``None``
    means they impose no condition).
    """
    size = 3
    mode = "constant"
    if outside is None:
        lo = minimum_filter(theta, size=size, mode="nearest")
        hi = maximum_filter(theta, size=size, mode="nearest")
    else:
        lo = minimum_filter(theta, size=size, mode=mode, cval=outside)
        hi = maximum_filter(theta, size=size, mode=mode, cval=outside)
    out = np.zeros(theta.shape, np.int8)
    agree = (lo == hi) & (theta != 0)
    out[agree] = theta[agree]
    return out


def theta_fields(eta: PhaseField, ratio: int, outside: int | None = None):
    """Return ``(theta, Theta)`` as PhaseFields on the large-cube scale."""
    th = theta_values(eta.values, ratio)
    Th = Theta_values(th, outside)
    scale = eta.scale * ratio
    return PhaseField("theta", scale, th), PhaseField("Theta", scale, Th)


def theta_fields_direct(eta: np.ndarray, ratio: int) -> tuple[np.ndarray, np.ndarray]:
    """Slow reference implementation straight from the definitions."""
    d = eta.ndim
    nplus = tuple(s // ratio for s in eta.shape)
    th = np.zeros(nplus, np.int8)
    for x in itertools.product(*[range(n) for n in nplus]):
        block = eta[tuple(slice(i * ratio, (i + 1) * ratio) for i in x)]
        if np.all(block == 1):
            th[x] = 1
        elif np.all(block == -1):
            th[x] = -1
    Th = np.zeros(nplus, np.int8)
    for x in itertools.product(*[range(n) for n in nplus]):
        s = th[x]
        if s == 0:
            continue
        good = True
        for off in itertools.product((-1, 0, 1), repeat=d):
            y = tuple(a + o for a, o in zip(x, off))
            if all(0 <= a < n for a, n in zip(y, nplus)) and th[y] != s:
                good = False
        Th[x] = s if good else 0
    return th, Th
