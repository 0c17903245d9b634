import bisect
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator


def _readonly_float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


def _writable_int_array(value: Any) -> np.ndarray:
    array = np.array(value)
    if array.size and not np.all(np.equal(np.mod(array, 1), 0)):
        raise ValueError("car counts must be integers")
    return array.astype(np.int64)


def _to_list(array: np.ndarray) -> list:
    return array.tolist()


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_readonly_float_array),
    PlainSerializer(_to_list, return_type=list),
]
IntArray = Annotated[
    np.ndarray,
    BeforeValidator(_writable_int_array),
    PlainSerializer(_to_list, return_type=list),
]

TravelTimeMode = Literal["exponential", "deterministic"]

# Largest mass drift a fluid state may carry, one Euler step's worth
FLUID_MASS_TOL = 1e-6


class _FrozenModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ---------------------------------------------------------------------------
# Market primitives
# ---------------------------------------------------------------------------

class NetworkParams(_FrozenModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, populate_by_name=True)

    r: int = Field(..., ge=1, description="Number of regions")
    n_cars: int = Field(..., ge=0, description="Fleet size N; region i sees requests at rate N*lambda_i")
    lam: FloatArray = Field(..., alias="lambda", description="Per-car passenger arrival rate of each region")
    mu: FloatArray = Field(..., description="Travel rates mu_ij; mean travel time is 1/mu_ij")
    p: FloatArray = Field(..., description="Passenger destination matrix P")
    rewards: Optional[FloatArray] = Field(default=None, description="Per-ride rewards c_ij, default 1/sum(lambda)")

    @model_validator(mode="after")
    def _check_shapes(self) -> "NetworkParams":
        r = self.r
        if self.lam.shape != (r,):
            raise ValueError(f"lambda has shape {self.lam.shape}, expected ({r},)")
        for name in ("mu", "p"):
            matrix = getattr(self, name)
            if matrix.shape != (r, r):
                raise ValueError(f"{name} has shape {matrix.shape}, expected ({r}, {r})")
        if self.rewards is not None and self.rewards.shape != (r, r):
            raise ValueError(f"rewards has shape {self.rewards.shape}, expected ({r}, {r})")
        return self

    @property
    def has_default_rewards(self) -> bool:
        return self.rewards is None

    def reward_matrix(self, rewards: Optional[np.ndarray] = None) -> np.ndarray:
        """Explicit rewards if given, else the availability weighting 1/sum(lambda)"""
        if rewards is not None:
            return np.asarray(rewards, dtype=float)
        if self.rewards is not None:
            return self.rewards
        return np.full((self.r, self.r), 1.0 / self.lam.sum())

    @property
    def mean_travel(self) -> np.ndarray:
        return 1.0 / self.mu

    @property
    def route_rate(self) -> np.ndarray:
        """lambda_i * P_ij"""
        return self.lam[:, None] * self.p

    def with_fleet(self, n_cars: int) -> "NetworkParams":
        return self.model_copy(update={"n_cars": int(n_cars)})

    def scaled_demand(self, factor: float) -> "NetworkParams":
        return self.model_copy(update={"lam": _readonly_float_array(self.lam * factor)})


class RoutingMatrix(_FrozenModel):
    q: FloatArray = Field(..., description="Row-stochastic empty-car routing matrix")

    @model_validator(mode="after")
    def _check_square(self) -> "RoutingMatrix":
        if self.q.ndim != 2 or self.q.shape[0] != self.q.shape[1]:
            raise ValueError(f"routing matrix must be square, got shape {self.q.shape}")
        return self

    @property
    def r(self) -> int:
        return self.q.shape[0]

    @classmethod
    def identity(cls, r: int) -> "RoutingMatrix":
        return cls(q=np.eye(r))

    def max_row_error(self) -> float:
        return float(np.max(np.abs(self.q.sum(axis=1) - 1.0)))


class ScheduleSlot(_FrozenModel):
    start: float = Field(..., description="Slot start time")
    end: float = Field(..., description="Slot end time")
    params: NetworkParams = Field(..., description="Parameters in effect during the slot")


class Schedule(_FrozenModel):
    slots: List[ScheduleSlot] = Field(..., min_length=1, description="Contiguous time slots")
    travel_time_mode: TravelTimeMode = Field(default="exponential", description="Travel-time law in simulation")
    units_per_hour: float = Field(default=1.0, gt=0, description="Schedule time units per clock hour")

    @model_validator(mode="after")
    def _check_slots(self) -> "Schedule":
        first = self.slots[0].params
        for index, slot in enumerate(self.slots):
            if not slot.end > slot.start:
                raise ValueError(f"slot {index} has end {slot.end} not after start {slot.start}")
            if index > 0 and abs(slot.start - self.slots[index - 1].end) > 1e-12:
                raise ValueError(f"slot {index} does not start where slot {index - 1} ends")
            if slot.params.r != first.r or slot.params.n_cars != first.n_cars:
                raise ValueError(f"slot {index} does not share r and N with slot 0")
        return self

    @property
    def start(self) -> float:
        return self.slots[0].start

    @property
    def end(self) -> float:
        return self.slots[-1].end

    @property
    def r(self) -> int:
        return self.slots[0].params.r

    @property
    def n_cars(self) -> int:
        return self.slots[0].params.n_cars

    def boundaries(self) -> List[float]:
        return [slot.start for slot in self.slots] + [self.end]

    def slot_index_at(self, t: float) -> int:
        """Index of the slot covering t, clamped to the first and last slot"""
        starts = [slot.start for slot in self.slots]
        return max(0, min(len(self.slots) - 1, bisect.bisect_right(starts, t) - 1))

    def params_at(self, t: float) -> NetworkParams:
        return self.slots[self.slot_index_at(t)].params

    def window_weights(self, t: float, horizon: float) -> List[Tuple[int, float]]:
        """
        Fraction of the window [t, t + horizon] spent in each slot

        Time before the first slot counts toward slot 0 and time after the
        last slot counts toward the final slot.
        """
        if horizon <= 0:
            raise ValueError("lookahead horizon must be positive")
        lo, hi = t, t + horizon
        weights: List[Tuple[int, float]] = []
        last = len(self.slots) - 1
        for index, slot in enumerate(self.slots):
            slot_lo = -np.inf if index == 0 else slot.start
            slot_hi = np.inf if index == last else slot.end
            overlap = min(hi, slot_hi) - max(lo, slot_lo)
            if overlap > 0:
                weights.append((index, overlap / horizon))
        if not weights:
            raise ValueError(f"window [{lo}, {hi}] does not overlap the schedule")
        return weights

    def with_fleet(self, n_cars: int) -> "Schedule":
        slots = [slot.model_copy(update={"params": slot.params.with_fleet(n_cars)}) for slot in self.slots]
        return self.model_copy(update={"slots": slots})


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------

class SystemState(BaseModel):
    """Integer car counts of the stochastic system; mutated in place by the simulator"""

    model_config = ConfigDict(arbitrary_types_allowed=True, validate_assignment=False)

    e_count: IntArray = Field(..., description="E_ij empty cars en route i->j, E_ii idle at i")
    f_count: IntArray = Field(..., description="F_ij full cars en route i->j")
    time: float = Field(default=0.0, description="Simulation clock")

    @property
    def total_cars(self) -> int:
        return int(self.e_count.sum() + self.f_count.sum())

    def idle(self) -> np.ndarray:
        return np.diag(self.e_count)

    def copy_state(self) -> "SystemState":
        return SystemState(e_count=self.e_count.copy(), f_count=self.f_count.copy(), time=self.time)


class FluidState(_FrozenModel):
    """A point of the fluid state space: nonnegative masses that sum to one"""

    e: FloatArray = Field(..., description="Empty-car fluid mass e_ij (e_ii idle)")
    f: FloatArray = Field(..., description="Full-car fluid mass f_ij")

    @model_validator(mode="after")
    def _check_state_space(self) -> "FluidState":
        if self.e.ndim != 2 or self.e.shape[0] != self.e.shape[1] or self.f.shape != self.e.shape:
            raise ValueError(f"e and f must be equal square matrices, got {self.e.shape} and {self.f.shape}")
        lowest = float(min(self.e.min(), self.f.min()))
        if lowest < -FLUID_MASS_TOL:
            raise ValueError(f"fluid mass {lowest:.3e} is negative")
        total = self.total_mass
        if abs(total - 1.0) > FLUID_MASS_TOL:
            raise ValueError(f"fluid masses sum to {total:.9f}, expected 1")
        return self

    @property
    def total_mass(self) -> float:
        return float(self.e.sum() + self.f.sum())

    @property
    def r(self) -> int:
        return self.e.shape[0]


# ---------------------------------------------------------------------------
# Solver outputs
# ---------------------------------------------------------------------------

class FluidSolution(_FrozenModel):
    e_bar: FloatArray = Field(..., description="Empty-car fluid masses")
    f_bar: FloatArray = Field(..., description="Full-car fluid masses")
    a_bar: FloatArray = Field(..., description="Availabilities in [0, 1]")
    value: float = Field(..., description="Objective value of the fluid program")
    q_star: Optional[RoutingMatrix] = Field(default=None, description="Recovered routing matrix")
    fixup_applied: bool = Field(default=False, description="Whether idle mass was consolidated")


class EquilibriumPoint(_FrozenModel):
    a_bar: FloatArray = Field(..., description="Equilibrium availabilities")
    e_bar: FloatArray = Field(..., description="Equilibrium empty-car masses")
    f_bar: FloatArray = Field(..., description="Equilibrium full-car masses")
    m_bar: float = Field(..., description="Idle mass parked at fully available regions")
    chain_matrix: FloatArray = Field(..., description="Column-stochastic idle-to-idle chain B")
    saturated: Tuple[int, ...] = Field(default=(), description="Regions with availability 1")


class FluidTrajectory(_FrozenModel):
    times: FloatArray = Field(..., description="Recorded time points")
    states: List[FluidState] = Field(..., description="Fluid state at each recorded time")
    u: FloatArray = Field(..., description="Cumulative regulator per region at each recorded time")
    mass: FloatArray = Field(..., description="Total mass at each recorded time")
    lyapunov: Optional[FloatArray] = Field(default=None, description="Lyapunov value at each recorded time")
    distance: Optional[FloatArray] = Field(default=None, description="Distance to the equilibrium set")
    max_lyapunov_increase: float = Field(default=0.0, description="Largest single-step increase of V")
    complementarity: float = Field(default=0.0, description="Sum of e_ii(t_k+1) * du_i(t_k)")
    steps: int = Field(default=0, description="Number of Euler steps taken")


class Station(_FrozenModel):
    kind: Literal["single_server", "infinite_server"]
    rate: float = Field(..., description="Service rate")
    label: str = Field(..., description="idle(i), full(i,j) or empty(i,j), 1-based")
    origin: int = Field(..., description="0-based origin region")
    destination: int = Field(..., description="0-based destination region")


class StationLayout(_FrozenModel):
    stations: List[Station]
    visit_ratios: FloatArray = Field(..., description="Visit ratio per station, normalized at an idle station")
    routing: FloatArray = Field(..., description="Station-level transition matrix")
    idle_index: Dict[int, int] = Field(..., description="Region -> position of its idle station")


class MvaResult(_FrozenModel):
    n_cars: int
    availability: FloatArray = Field(..., description="P(E_ii > 0) per region")
    mean_queue: FloatArray = Field(..., description="Mean number of cars at each station")
    throughput: float = Field(..., description="System throughput at the normalization station")
    labels: List[str] = Field(default_factory=list, description="Station labels")


class FleetSizingResult(_FrozenModel):
    kappa: float = Field(..., description="Minimal fluid mass for perfect availability")
    q_kappa: RoutingMatrix
    e_kappa: FloatArray
    f_kappa: FloatArray
    triangle_ok: bool = Field(..., description="Mean travel times satisfy the triangle inequality")
    repaired: bool = Field(default=False, description="Positive-diagonal repair was applied")
    backhaul_kappa: Optional[float] = Field(default=None, description="Objective of the back-haul routing")

    @property
    def verdict(self) -> str:
        return "undersupply" if self.kappa > 1.0 else "oversupply"

    @property
    def fleet_multiplier(self) -> float:
        return self.kappa


# ---------------------------------------------------------------------------
# Linear programs
# ---------------------------------------------------------------------------

Relation = Literal["<=", "=", ">="]


class LpProblem(_FrozenModel):
    n_vars: int = Field(..., ge=1)
    objective: FloatArray = Field(..., description="Objective coefficients (maximized)")
    a_matrix: FloatArray = Field(..., description="Constraint rows")
    relations: List[Relation]
    rhs: FloatArray
    lower: FloatArray = Field(..., description="Variable lower bounds, -inf allowed")
    upper: FloatArray = Field(..., description="Variable upper bounds, inf allowed")

    @model_validator(mode="after")
    def _check_dimensions(self) -> "LpProblem":
        n = self.n_vars
        if self.objective.shape != (n,):
            raise ValueError(f"objective has {self.objective.size} entries, expected {n}")
        m = len(self.relations)
        if self.a_matrix.shape != (m, n) and not (m == 0 and self.a_matrix.size == 0):
            raise ValueError(f"constraint matrix has shape {self.a_matrix.shape}, expected ({m}, {n})")
        if self.rhs.shape != (m,):
            raise ValueError(f"rhs has {self.rhs.size} entries, expected {m}")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        if not (np.all(np.isfinite(self.objective)) and np.all(np.isfinite(self.a_matrix))
                and np.all(np.isfinite(self.rhs))):
            raise ValueError("objective, rows and rhs must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("a lower bound exceeds its upper bound")
        return self

    @property
    def n_rows(self) -> int:
        return len(self.relations)

    @property
    def n_constraints(self) -> int:
        """Structural rows plus plain sign constraints x >= 0"""
        sign_only = np.sum((self.lower == 0.0) & np.isposinf(self.upper))
        return self.n_rows + int(sign_only)

    @property
    def constraints(self) -> List[Tuple[np.ndarray, str, float]]:
        return [(self.a_matrix[k], self.relations[k], float(self.rhs[k])) for k in range(self.n_rows)]


class LpSolution(_FrozenModel):
    status: Literal["optimal", "infeasible", "unbounded"]
    x: Optional[FloatArray] = None
    objective: Optional[float] = None
    iterations: int = 0
    max_residual: float = 0.0


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class SimConfig(_FrozenModel):
    horizon: Optional[float] = Field(default=None, gt=0, description="Run length; defaults to the schedule span")
    warmup: Optional[float] = Field(default=None, ge=0, description="Discarded prefix; defaults to a fraction of horizon")
    seed: int = Field(default=0, description="Base seed; replication k uses seed + k")
    replications: int = Field(default=1, ge=1)
    travel_time_mode: Optional[TravelTimeMode] = Field(default=None, description="Overrides the scenario's mode")
    n_cars: Optional[int] = Field(default=None, ge=0, description="Overrides N for the run")
    bin_width: Optional[float] = Field(default=None, gt=0, description="Width of time bins in the breakdown")
    check_conservation: bool = Field(default=False, description="Assert car conservation after every event")
    max_workers: Optional[int] = Field(default=None, ge=1, description="Process-pool size for replications")


class SimBin(_FrozenModel):
    start: float
    end: float
    requests: int
    fulfilled: int
    utility: float


class SimMetrics(_FrozenModel):
    requests: IntArray = Field(..., description="Requests per region, summed over replications")
    fulfilled: IntArray = Field(..., description="Fulfilled requests per region, summed over replications")
    fulfilled_fraction: FloatArray = Field(..., description="Mean fulfilled fraction per region")
    fraction_std: FloatArray = Field(..., description="Sample std of the per-region fraction across replications")
    time_available: FloatArray = Field(..., description="Time-average of 1(E_ii > 0) per region")
    mean_e: FloatArray = Field(..., description="Time-average empty-car fraction")
    mean_f: FloatArray = Field(..., description="Time-average full-car fraction")
    utility: float = Field(..., description="Mean utility over replications")
    utility_std: float = Field(default=0.0)
    ci_half_width: float = Field(default=0.0, description="95% half-width of the utility mean")
    replicate_utilities: List[float] = Field(default_factory=list)
    bins: List[SimBin] = Field(default_factory=list)
    events: int = Field(default=0, description="Events processed over all replications")


class Violation(_FrozenModel):
    field: str
    index: Optional[Tuple[int, ...]] = None
    residual: float = 0.0
    message: str

    def __str__(self) -> str:
        return self.message


class RunManifest(BaseModel):
    command: str
    scenario: str
    seeds: List[int] = Field(default_factory=list)
    parameters: Dict[str, Any] = Field(default_factory=dict)
    tool_version: str
    outputs: List[str] = Field(default_factory=list)
