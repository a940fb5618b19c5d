"""Lattice geometry, conductance laws, environments and assumption checks."""
from .geometry import LatticeSpec, SiteIndex, SiteCapError, build_lattice
from .laws import ConductanceLaw
from .environment import (Environment, sample_environment, build_trap_environment,
                          pair_index, n_pairs, trap_sites)
from .assumptions import AssumptionReport, check_assumptions

__all__ = [
    "AssumptionReport", "ConductanceLaw", "Environment", "LatticeSpec", "SiteCapError", "SiteIndex",
    "build_lattice", "build_trap_environment", "check_assumptions", "n_pairs", "pair_index",
    "sample_environment", "trap_sites",
]
