"""
Numerical solvers: revised simplex, fluid LP, equilibrium, fluid ODE, MVA and fleet sizing.
"""

from .equilibrium import equilibrium_point
from .fleet_sizing import min_fleet, repair_diagonal
from .fluid_ode import integrate
from .fluid_opt import solve_fluid_optimum, solve_lookahead
from .mva import analyze

__all__ = [
    "equilibrium_point",
    "min_fleet",
    "repair_diagonal",
    "integrate",
    "solve_fluid_optimum",
    "solve_lookahead",
    "analyze"
]
