"""Numerical solvers for linear-quadratic mean field games with a major player.

The package solves the reduced master system and the finite ``N + 1``
player Nash system by backward RK4, compares them, and simulates the
resulting feedback strategies by Euler-Maruyama.
"""

from ._backend import BACKEND
from .errors import *  # noqa: F401,F403
from .harness import ConvergenceTable, RateFit, VerifyReport, fit_rate, run_convergence, verify_all
from .lq_model import LqSpec
from .master import MasterSolution, eval_master, feedback, master_residual, solve_master
from .measures import EmpiricalMeasure, empirical_from_states, mean, moment, wasserstein
from .nash import NashSolution, eval_nash, nash_residual, project_master, solve_nash
from .simulator import (
    CostEstimate,
    Mu0,
    PathBundle,
    SimConfig,
    deviation_test,
    estimate_major_cost,
    estimate_minor_cost,
    simulate_coupled_particles,
    simulate_equilibrium_flow,
)
from .config import load_config, save_config, write_outputs

__version__ = "0.1.0"
