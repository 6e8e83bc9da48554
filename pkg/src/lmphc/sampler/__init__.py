"""Grand-canonical Metropolis sampling of the hard-core Kac model."""

from .state import (ConstraintViolation, DilutedConstraint, GCMCSampler, MOVE_NAMES,
                    lattice_fill)
from .run import RunSummary, detailed_balance_audit, integrated_autocorrelation, run

__all__ = [
    "ConstraintViolation", "DilutedConstraint", "GCMCSampler", "MOVE_NAMES", "lattice_fill",
    "RunSummary", "detailed_balance_audit", "integrated_autocorrelation", "run",
]
