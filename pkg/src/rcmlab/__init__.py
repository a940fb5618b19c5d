"""Random conductance models with stable-like jumps: numerics and experiments."""
from ._accel import BACKEND
from .green_harnack import (
    green_function,
    harmonic_solve,
    harnack_ratios,
    hitting_profile,
    trap_return_probability,
)
from .kernel_numerics import bounds_check, heat_kernel, heat_kernel_eig, heat_kernel_times
from .lattice_env import (
    ConductanceLaw,
    Environment,
    LatticeSpec,
    build_lattice,
    build_trap_environment,
    check_assumptions,
    sample_environment,
)
from .markov_core import dirichlet_energy, generator, jump_kernel
from .stable_reference import StableDensityEvaluator, llt_error, stable_density, stable_symbol_constant
from .walk_sim import exit_time_stats, run_batch, simulate_path

__all__ = [
    "BACKEND", "ConductanceLaw", "Environment", "LatticeSpec", "StableDensityEvaluator",
    "bounds_check", "build_lattice", "build_trap_environment", "check_assumptions",
    "dirichlet_energy", "exit_time_stats", "generator", "green_function", "harmonic_solve",
    "harnack_ratios", "heat_kernel", "heat_kernel_eig", "heat_kernel_times", "hitting_profile",
    "jump_kernel", "llt_error", "run_batch", "sample_environment", "simulate_path",
    "stable_density", "stable_symbol_constant", "trap_return_probability",
]
