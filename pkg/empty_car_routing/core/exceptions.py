"""
Error taxonomy for empty-car routing workflows.

The command-line front end maps each family to an exit code:
ScenarioError -> 2, SolverError -> 3, SimulationError -> 4.
"""

from typing import Optional


class EmptyCarRoutingError(Exception):
    """Base class for all package errors"""

    exit_code = 1


class ScenarioError(EmptyCarRoutingError):
    """Scenario data could not be parsed, built or validated"""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        details = []
        if field is not None:
            details.append(f"field '{field}'")
        if line is not None:
            details.append(f"line {line}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class SolverError(EmptyCarRoutingError):
    """A numerical solver failed where success is expected"""

    exit_code = 3


class LpInfeasibleError(SolverError):
    pass


class LpUnboundedError(SolverError):
    pass


class ReducibleChainError(SolverError):
    """The idle-to-idle routing chain has more than one communicating class"""


class FluidIntegrationError(SolverError):
    """Euler integration lost mass beyond tolerance, usually a too-large dt"""


class SimulationError(EmptyCarRoutingError):
    """The event simulation was misconfigured or broke an invariant"""

    exit_code = 4
