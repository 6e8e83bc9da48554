"""Physical and scale parameters of the LMP-hc model."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, replace

HAMILTONIANS = ("functional", "multibody")


class ParameterError(ValueError):
    """Raised for out-of-range or inconsistent model parameters."""


def ball_volume(d: int, radius: float) -> float:
    """Volume of the d-dimensional Euclidean ball of the given radius."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius**d


@dataclass(frozen=True)
class ModelParams:
    """All model and scale parameters.

    ``lam`` is the chemical potential (``lambda`` is reserved in Python).
    ``kac=False`` switches the Kac energy off entirely, leaving the ideal gas
    plus hard core.  ``hamiltonian`` selects ``"functional"``, the integral of
    the energy density of the smeared density (self-interaction included),
    or ``"multibody"``, the same expansion restricted to distinct particle
    indices.
    """

    d: int = 2
    gamma: float = 0.25
    hc_radius: float = 0.0
    beta: float = 1.9
    lam: float = 0.0
    alpha: float = 0.25
    a: float = 0.1
    quad_factor: int = 8
    kac: bool = True
    hamiltonian: str = "functional"
    kernel_normalization: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ParameterError(f"d must be 1, 2 or 3, got {self.d}")
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.hc_radius < 0.0 or self.hc_radius >= 1.0 / self.gamma:
            raise ParameterError(
                f"hc_radius must satisfy 0 <= R < 1/gamma, got {self.hc_radius}"
            )
        if self.beta < 0.0:
            raise ParameterError(f"beta must be non-negative, got {self.beta}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.a <= 0.0:
            raise ParameterError(f"a must be positive, got {self.a}")
        if int(self.quad_factor) != self.quad_factor or self.quad_factor < 2:
            raise ParameterError(f"quad_factor must be an integer >= 2, got {self.quad_factor}")
        if self.hamiltonian not in HAMILTONIANS:
            raise ParameterError(f"hamiltonian must be one of {HAMILTONIANS}")
        if self.kernel_normalization != 1.0:
            raise ParameterError("only kernel_normalization = 1 is supported")
        if self.a >= self.alpha:
            # desk-scale gammas cannot honour 1 >> alpha >> a; allowed but flagged
            warnings.warn(
                f"scale ordering alpha >> a violated (alpha={self.alpha}, a={self.a})",
                stacklevel=3,
            )

    # ---- derived scales -------------------------------------------------
    @property
    def kac_range(self) -> float:
        return 1.0 / self.gamma

    @property
    def ell_minus(self) -> float:
        return self.gamma ** (-(1.0 - self.alpha))

    @property
    def scale_ratio(self) -> int:
        """Integer number of small cubes per side of a large cube."""
        return max(1, int(round(self.gamma ** (-2.0 * self.alpha))))

    @property
    def ell_plus(self) -> float:
        return self.scale_ratio * self.ell_minus

    @property
    def zeta(self) -> float:
        return self.gamma**self.a

    @property
    def epsilon(self) -> float:
        return ball_volume(self.d, self.hc_radius)

    @property
    def nodes_per_cube(self) -> int:
        """Quadrature nodes per axis inside one small cube."""
        return max(1, math.ceil(self.ell_minus * self.gamma * self.quad_factor - 1e-9))

    @property
    def grid_spacing(self) -> float:
        """Largest spacing <= 1/(gamma*quad_factor) that divides ell_minus."""
        return self.ell_minus / self.nodes_per_cube

    # ---- helpers --------------------------------------------------------
    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def with_zeta(self, zeta: float) -> "ModelParams":
        """Return a copy whose accuracy parameter equals ``zeta``."""
        if not 0.0 < zeta < 1.0:
            raise ParameterError("zeta must lie in (0, 1)")
        return replace(self, a=math.log(zeta) / math.log(self.gamma))

    def as_dict(self) -> dict:
        return asdict(self)
