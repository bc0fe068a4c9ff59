"""Time-splitting simulator for a stochastic compressible Navier-Stokes system.

Alternates a deterministic half-step (parabolic continuity equation plus a
Galerkin momentum equation) with a stochastic half-step (frozen density,
projected multiplicative noise), and ships diagnostics for the energy
balance, weak forms, martingale structure and tau-refinement.
"""

from .diagnostics import (
    energy_residual,
    flux_diagnostic,
    martingale_test,
    mass_residual,
    moment_summary,
    weak_form_residual,
)
from .driver import refine_tau_sweep, run_ensemble, run_path, simulate_ensemble
from .model import ConfigError, Grid, InitialData, NoiseConfig, SimParams, validate_params

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Grid",
    "InitialData",
    "NoiseConfig",
    "SimParams",
    "energy_residual",
    "flux_diagnostic",
    "martingale_test",
    "mass_residual",
    "moment_summary",
    "refine_tau_sweep",
    "run_ensemble",
    "run_path",
    "simulate_ensemble",
    "validate_params",
    "weak_form_residual",
]
