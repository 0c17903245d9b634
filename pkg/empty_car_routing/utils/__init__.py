"""
Domain models, scenario handling and report output.
"""

from .models import (
    NetworkParams,
    RoutingMatrix,
    Schedule,
    ScheduleSlot,
    SystemState,
    FluidState,
    SimConfig,
    SimMetrics
)

__all__ = [
    "NetworkParams",
    "RoutingMatrix",
    "Schedule",
    "ScheduleSlot",
    "SystemState",
    "FluidState",
    "SimConfig",
    "SimMetrics"
]
