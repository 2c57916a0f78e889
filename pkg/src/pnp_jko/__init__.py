"""Minimizing-movement (JKO) solver for two-species drift-diffusion with
electrostatic coupling, plus a finite-volume reference solver and
diagnostics for the a-priori estimates of the scheme."""

__version__ = "0.1.0"

from .grid import Density, Grid, ScalarField, State, normalize
from .energy import ModelParams, total_energy
from .elliptic import solve_poisson_neumann
from .transport import w2_squared_1d, sinkhorn_w2
from .jko import InnerSolverConfig, Trajectory, jko_step, run_trajectory
from .reference import FVConfig, fv_evolve, heat_evolve, pme_evolve
from .diagnostics import run_diagnostics
from .config import ScenarioConfig

__all__ = [
    "Density", "Grid", "ScalarField", "State", "normalize", "ModelParams", "total_energy",
    "solve_poisson_neumann", "w2_squared_1d", "sinkhorn_w2", "InnerSolverConfig",
    "Trajectory", "jko_step", "run_trajectory", "FVConfig", "fv_evolve", "heat_evolve",
    "pme_evolve", "run_diagnostics", "ScenarioConfig",
]
