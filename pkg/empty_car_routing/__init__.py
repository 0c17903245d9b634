"""
Empty-car routing - fluid optimization, exact analysis and simulation of closed ridesharing networks.
"""

__version__ = "1.0.0"
__author__ = "Empty-Car Routing Team"

from .core.orchestrator import ExperimentOrchestrator
from .simulation.simulator import simulate
from .solvers.fluid_opt import solve_fluid_optimum
from .utils.scenarios import builtin_scenario, load_scenario

__all__ = [
    "ExperimentOrchestrator",
    "builtin_scenario",
    "load_scenario",
    "simulate",
    "solve_fluid_optimum",
]
