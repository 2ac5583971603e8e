"""Entropy gradient flows in Hellinger-Kantorovich and Wasserstein geometry.

Finite-volume solvers for the spherical and conic Hellinger-Kantorovich flows
and the Wasserstein flow of relative entropies ``-int_m^u f``, diagnostics for
their dissipation structure, and a dynamic-formulation solver for the
distances W2, d_HK and d_HKS.
"""

from .entropy import (EntropyModel, make_arctangential, make_generic, make_log_potential,
                      make_power_law, normalize_equilibrium)
from .fields import DensityField
from .flow import FlowKind, SolverConfig, Trajectory, mass_recovery, run
from .grid import DomainKind, Grid
from .transport import DistanceKind, SolverOpts, TransportProblem, solve_dynamic

__all__ = [
    "DensityField", "DistanceKind", "DomainKind", "EntropyModel", "FlowKind", "Grid",
    "SolverConfig", "SolverOpts", "Trajectory", "TransportProblem", "make_arctangential",
    "make_generic", "make_log_potential", "make_power_law", "mass_recovery",
    "normalize_equilibrium", "run", "solve_dynamic",
]
