"""
Fluid-based routing optimization

Builds the relaxed fluid LP over (e_bar, f_bar, a_bar), consolidates idle
mass onto a fully available region, and recovers the empty-car routing
matrix from the optimal flows. Time-varying schedules get T-lookahead LPs
whose coefficients are window averages of the schedule.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..core.config import get_settings
from ..core.exceptions import SolverError
from ..utils.models import FloatArray, FluidSolution, LpProblem, NetworkParams, RoutingMatrix, Schedule
from .linprog import LpBuilder, require_optimal, solve

logger = logging.getLogger(__name__)


class FluidCoefficients(BaseModel):
    """The four coefficient families of the fluid LP"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    reward_rate: FloatArray  # lambda_i P_ij c_ij
    route_rate: FloatArray   # lambda_i P_ij
    mu: FloatArray
    lam: FloatArray

    @property
    def r(self) -> int:
        return self.lam.shape[0]

    @classmethod
    def from_params(cls, params: NetworkParams, rewards: Optional[np.ndarray] = None) -> "FluidCoefficients":
        route = params.route_rate
        return cls(
            reward_rate=route * params.reward_matrix(rewards),
            route_rate=route,
            mu=params.mu,
            lam=params.lam,
        )


def _e(i: int, j: int, r: int) -> int:
    return i * r + j


def _f(i: int, j: int, r: int) -> int:
    return r * r + i * r + j


def _a(i: int, r: int) -> int:
    return 2 * r * r + i


def _build_lp(coef: FluidCoefficients) -> LpProblem:
    r = coef.r
    lp = LpBuilder(2 * r * r + r)
    mu, lam, route = coef.mu, coef.lam, coef.route_rate

    for i in range(r):
        lp.objective[_a(i, r)] = coef.reward_rate[i].sum()
        lp.upper[_a(i, r)] = 1.0

    # Little's law for full cars
    for i in range(r):
        for j in range(r):
            row = lp.row()
            row[_a(i, r)] = route[i, j]
            row[_f(i, j, r)] = -mu[i, j]
            lp.add_row(row, "=", 0.0)

    def full_inflow(row: np.ndarray, i: int, sign: float) -> None:
        for k in range(r):
            row[_f(k, i, r)] += sign * mu[k, i]

    def empty_inflow(row: np.ndarray, i: int, sign: float) -> None:
        for k in range(r):
            if k != i:
                row[_e(k, i, r)] += sign * mu[k, i]

    # Empty departures cannot exceed full arrivals
    for i in range(r):
        for j in range(r):
            if j == i:
                continue
            row = lp.row()
            row[_e(i, j, r)] = mu[i, j]
            full_inflow(row, i, -1.0)
            lp.add_row(row, "<=", 0.0)

    # Served demand lies between empty arrivals and all arrivals
    for i in range(r):
        row = lp.row()
        empty_inflow(row, i, 1.0)
        row[_a(i, r)] -= lam[i]
        lp.add_row(row, "<=", 0.0)

        row = lp.row()
        row[_a(i, r)] = lam[i]
        empty_inflow(row, i, -1.0)
        full_inflow(row, i, -1.0)
        lp.add_row(row, "<=", 0.0)

    # Flow balance
    for i in range(r):
        row = lp.row()
        row[_a(i, r)] = lam[i]
        for j in range(r):
            if j != i:
                row[_e(i, j, r)] += mu[i, j]
        empty_inflow(row, i, -1.0)
        full_inflow(row, i, -1.0)
        lp.add_row(row, "=", 0.0)

    row = lp.row()
    row[: 2 * r * r] = 1.0
    lp.add_row(row, "=", 1.0)

    return lp.build()


def build_relaxed_lp(params: NetworkParams, rewards: Optional[np.ndarray] = None) -> LpProblem:
    """
    Relaxed fluid LP for static parameters

    Variables are ordered e_bar (row-major), f_bar (row-major), a_bar.
    """
    return _build_lp(FluidCoefficients.from_params(params, rewards))


def _solution_from_lp(x: np.ndarray, value: float, r: int) -> FluidSolution:
    rr = r * r
    e_bar = np.clip(x[:rr].reshape(r, r), 0.0, None)
    f_bar = np.clip(x[rr:2 * rr].reshape(r, r), 0.0, None)
    a_bar = np.clip(x[2 * rr:], 0.0, 1.0)
    return FluidSolution(e_bar=e_bar, f_bar=f_bar, a_bar=a_bar, value=value)


def _solve_coefficients(coef: FluidCoefficients, what: str) -> FluidSolution:
    problem = _build_lp(coef)
    solution = require_optimal(solve(problem), what)
    sol = _solution_from_lp(solution.x, solution.objective, coef.r)
    sol = apply_boundary_fixup(sol)
    q_star = _recover(sol, coef.mu, coef.lam)
    return sol.model_copy(update={"q_star": q_star})


def solve_fluid_optimum(params: NetworkParams, rewards: Optional[np.ndarray] = None) -> FluidSolution:
    """
    Solve the relaxed fluid LP, consolidate idle mass and recover q*

    Args:
        params: Market primitives
        rewards: Optional reward matrix overriding params.rewards

    Returns:
        FluidSolution carrying the optimal value and the routing matrix q*
    """
    try:
        sol = _solve_coefficients(FluidCoefficients.from_params(params, rewards), "fluid LP")
    except SolverError as e:
        logger.error(f"Fluid LP failed for a valid scenario: {e}")
        raise
    logger.info(f"Fluid LP solved: value {sol.value:.6f}, min availability {sol.a_bar.min():.4f}")
    return sol


def apply_boundary_fixup(sol: FluidSolution) -> FluidSolution:
    """
    Park all idle mass at one fully available region

    If no region is fully available the LP must already carry no idle mass.
    Otherwise the idle mass moves to the smallest-index region with a_i = 1.
    The objective does not depend on e_bar, so the value is unchanged.
    """
    settings = get_settings()
    saturated = np.flatnonzero(sol.a_bar >= 1.0 - settings.saturation_tol)
    idle = np.diag(sol.e_bar)

    if saturated.size == 0:
        if np.any(idle > settings.fluid_mass_tol):
            raise SolverError(
                f"idle mass {idle.max():.3e} at an unsaturated optimum; the LP solution is not optimal"
            )
        return sol

    target = int(saturated[0])
    e_bar = np.array(sol.e_bar)
    total_idle = idle.sum()
    np.fill_diagonal(e_bar, 0.0)
    e_bar[target, target] = total_idle
    if total_idle > 0 and not np.isclose(idle[target], total_idle):
        logger.info(f"Moved idle mass {total_idle:.6f} onto region {target + 1}")
    return sol.model_copy(update={"e_bar": _frozen(e_bar), "fixup_applied": True})


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _recover(sol: FluidSolution, mu: np.ndarray, lam: np.ndarray) -> RoutingMatrix:
    settings = get_settings()
    r = lam.shape[0]
    full_in = (mu * sol.f_bar).sum(axis=0)
    empty_out = mu * sol.e_bar
    empty_in = empty_out.sum(axis=0) - np.diag(empty_out)
    q = np.zeros((r, r))

    for i in range(r):
        if full_in[i] <= 1e-12:
            q[i, i] = 1.0
            continue
        q[i] = empty_out[i] / full_in[i]
        q[i, i] = (lam[i] * sol.a_bar[i] - empty_in[i]) / full_in[i]

    q = np.clip(q, 0.0, None)
    drift = np.abs(q.sum(axis=1) - 1.0)
    if np.any(drift > settings.routing_drift_tol):
        worst = int(np.argmax(drift))
        raise SolverError(
            f"recovered routing row {worst + 1} sums to {q[worst].sum():.12g}; "
            f"the fluid solution does not balance flows at region {worst + 1}"
        )
    return RoutingMatrix(q=q / q.sum(axis=1, keepdims=True))


def recover_routing(sol: FluidSolution, params: NetworkParams) -> RoutingMatrix:
    """q_ij = mu_ij e_ij / full inflow of i; q_ii absorbs the demand not met by empty arrivals"""
    return _recover(sol, params.mu, params.lam)


def utility(a_bar: np.ndarray, params: NetworkParams, rewards: Optional[np.ndarray] = None) -> float:
    """sum_ij a_i lambda_i P_ij c_ij"""
    a_bar = np.asarray(a_bar, dtype=float)
    return float((a_bar[:, None] * params.route_rate * params.reward_matrix(rewards)).sum())


# ---------------------------------------------------------------------------
# Time-varying schedules
# ---------------------------------------------------------------------------

def window_coefficients(schedule: Schedule, t: float, horizon: float) -> FluidCoefficients:
    """Average each LP coefficient over [t, t + horizon] of the piecewise-constant schedule"""
    weights = schedule.window_weights(t, horizon)
    r = schedule.r
    reward_rate = np.zeros((r, r))
    route_rate = np.zeros((r, r))
    mu = np.zeros((r, r))
    lam = np.zeros(r)
    for index, weight in weights:
        slot = FluidCoefficients.from_params(schedule.slots[index].params)
        reward_rate += weight * slot.reward_rate
        route_rate += weight * slot.route_rate
        mu += weight * slot.mu
        lam += weight * slot.lam
    return FluidCoefficients(reward_rate=reward_rate, route_rate=route_rate, mu=mu, lam=lam)


def build_lookahead_lp(schedule: Schedule, t: float, horizon: float) -> LpProblem:
    """Fluid LP whose coefficients are averages over the next `horizon` time units"""
    return _build_lp(window_coefficients(schedule, t, horizon))


def solve_lookahead(schedule: Schedule, t: float, horizon: float) -> FluidSolution:
    return _solve_coefficients(window_coefficients(schedule, t, horizon), f"lookahead LP at t={t}")


def lookahead_table(schedule: Schedule, delta: float, horizon: float) -> List[Tuple[float, RoutingMatrix]]:
    """
    Routing matrices q*(k * delta) for every decision epoch of the schedule

    Args:
        schedule: Time-varying parameters
        delta: Spacing of decision epochs, in schedule time units
        horizon: Lookahead window T, in schedule time units

    Returns:
        Time-sorted list of (epoch, routing matrix)
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    n_epochs = int(round((schedule.end - schedule.start) / delta))
    cache: Dict[Tuple[Tuple[int, float], ...], RoutingMatrix] = {}
    table: List[Tuple[float, RoutingMatrix]] = []

    for k in range(max(n_epochs, 1)):
        t = schedule.start + k * delta
        key = tuple((index, round(weight, 12)) for index, weight in schedule.window_weights(t, horizon))
        if key not in cache:
            cache[key] = solve_lookahead(schedule, t, horizon).q_star
        table.append((t, cache[key]))

    logger.info(f"Lookahead table: {len(table)} epochs, {len(cache)} distinct LPs (T={horizon}, delta={delta})")
    return table


def standard_fluid_table(schedule: Schedule) -> List[Tuple[float, RoutingMatrix]]:
    """One static optimum per slot, switched at slot starts"""
    table = []
    for slot in schedule.slots:
        sol = solve_fluid_optimum(slot.params)
        table.append((slot.start, sol.q_star))
    return table
