"""Optimal pre-stressed membranes on lattice grids via second-order cone programming."""

from .assembly import DualAssignment, assemble, two_point_residual
from .geometry import (DirichletSet, DiscreteLoad, Domain, LoadSpec, build_grid, build_pairs,
                       discretize_load)
from .membrane import (MembraneSolution, TrussMeasure, check_optimality, compliance_at_mass,
                       energy_J, solve_om)
from .solver import SolveOptions, SolveReport, certify, solve

__all__ = [
    "DirichletSet", "DiscreteLoad", "Domain", "DualAssignment", "LoadSpec", "MembraneSolution",
    "SolveOptions", "SolveReport", "TrussMeasure", "assemble", "build_grid", "build_pairs",
    "certify", "check_optimality", "compliance_at_mass", "discretize_load", "energy_J", "solve",
    "solve_om", "two_point_residual",
]
__version__ = "0.1.0"
