"""Model core: parameters, kernel, configurations and energies."""

from .domain import (CellIndex, Domain, HardCoreViolation, ParticleConfiguration,
                     hardcore_admissible, pair_violations)
from .energy import (HARD_CORE_ENERGY, MultibodyGuardError, energy, energy_functional,
                     energy_multibody, interaction_energy, local_density, pair_potential_grid,
                     relative_energy)
from .grid import DensityField, QuadratureGrid
from .kernel import (KERNEL_CONSTANTS, kac_kernel, kernel_of_distance, kernel_power_integral,
                     pair_overlap)
from .params import ModelParams, ParameterError, ball_volume

__all__ = [
    "CellIndex", "DensityField", "Domain", "HARD_CORE_ENERGY", "HardCoreViolation",
    "KERNEL_CONSTANTS", "ModelParams", "MultibodyGuardError", "ParameterError",
    "ParticleConfiguration", "QuadratureGrid", "ball_volume", "energy", "energy_functional",
    "energy_multibody", "hardcore_admissible", "interaction_energy", "kac_kernel",
    "kernel_of_distance", "kernel_power_integral", "local_density", "pair_overlap",
    "pair_potential_grid", "pair_violations", "relative_energy",
]
