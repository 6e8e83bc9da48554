"""Numerical toolkit for the LMP hard-core continuum particle model.

Subpackages and modules:

- ``lmphc.model``: parameters, Kac kernel, quadrature lattice, energies, domains
- ``lmphc.meanfield``: free energy, critical point, coexistence, fixed-point map
- ``lmphc.sampler``: grand-canonical Monte Carlo with diluted constraints
- ``lmphc.coarse_grain``: phase indicators, contours, Peierls statistics
- ``lmphc.effective_ham``: coarse-grained Hamiltonian on occupation numbers
- ``lmphc.cluster_exp``: diagrams, link activities, truncated expansion, polymers
- ``lmphc.dobrushin``: conditional measures, Vaserstein couplings, uniqueness check
- ``lmphc.cli``: the ``lmphc`` command line tool
"""

__version__ = "0.1.0"

__all__ = ["cli", "cluster_exp", "coarse_grain", "dobrushin", "effective_ham", "meanfield",
           "model", "sampler"]
