"""Coarse graining: cube partitions, phase indicators, contours and their statistics."""

from .contours import (Contour, ContourBoundaryError, ContourGeometryError, Interior,
                       dump_contours, euler_characteristic_2d, extract_contours, field_csv,
                       is_simply_connected, outer_boundary)
from .fields import (AmbiguousWindowError, CoarseGrid, PhaseField, Theta_values, coarse_grid,
                     cube_counts, empirical_density, eta_field, eta_of_counts, eta_window,
                     theta_fields, theta_fields_direct, theta_values)
from .observables import correlation_observable, kernel_product_integral
from .peierls import (InsufficientStatistics, PeierlsEstimate, contour_events, cutoff_weight,
                      peierls_statistics, wilson_interval)

__all__ = [
    "Contour", "ContourBoundaryError", "ContourGeometryError", "Interior", "dump_contours",
    "euler_characteristic_2d", "extract_contours", "field_csv", "is_simply_connected",
    "outer_boundary", "AmbiguousWindowError", "CoarseGrid", "PhaseField", "Theta_values",
    "coarse_grid", "cube_counts", "empirical_density", "eta_field", "eta_of_counts", "eta_window",
    "theta_fields", "theta_fields_direct", "theta_values", "correlation_observable",
    "kernel_product_integral", "InsufficientStatistics", "PeierlsEstimate", "contour_events",
    "cutoff_weight", "peierls_statistics", "wilson_interval",
]
