"""
Configuration and error types shared by every module.
"""

from .config import get_settings
from .exceptions import EmptyCarRoutingError, ScenarioError, SimulationError, SolverError

__all__ = ["get_settings", "EmptyCarRoutingError", "ScenarioError", "SimulationError", "SolverError"]
