"""
Fluid model integration with reflection at empty idle queues.

The state (e, f) lives on the simplex of total mass 1. The regulator u_i
grows only while e_ii sits at zero and throttles region i's passenger
clock to whatever idle inflow is available.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from ..core.config import get_settings
from ..core.exceptions import FluidIntegrationError, ReducibleChainError
from ..utils.models import EquilibriumPoint, FluidState, FluidTrajectory, NetworkParams, RoutingMatrix
from .equilibrium import equilibrium_point, lyapunov_from_arrays

logger = logging.getLogger(__name__)


def _inflows(e: np.ndarray, f: np.ndarray, mu: np.ndarray, q_diag: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    full_in = (mu * f).sum(axis=0)
    moving = mu * e
    empty_in = moving.sum(axis=0) - np.diag(moving)
    return full_in, empty_in + q_diag * full_in


def derivative(state: FluidState, params: NetworkParams, routing: RoutingMatrix):
    """
    Time derivatives of the fluid model at a state

    Returns:
        (de, df, u_dot) with u_dot the regulator rate per region
    """
    tol = get_settings().boundary_tol
    mu, lam, q = params.mu, params.lam, routing.q
    e, f = state.e, state.f
    full_in, inflow = _inflows(e, f, mu, np.diag(q))

    at_boundary = np.diag(e) <= tol
    u_dot = np.where(at_boundary, np.maximum(0.0, 1.0 - inflow / lam), 0.0)
    served = lam * (1.0 - u_dot)

    df = params.route_rate * (1.0 - u_dot)[:, None] - mu * f
    de = -mu * e + q * full_in[:, None]
    np.fill_diagonal(de, inflow - served)
    return de, df, u_dot


def distance_to_equilibrium(state: FluidState, point: EquilibriumPoint) -> float:
    """Max-norm distance to the equilibrium set, free only in the saturated idle split"""
    saturated = point.a_bar >= 1.0 - get_settings().saturation_tol
    travel = np.abs(state.e - point.e_bar)
    np.fill_diagonal(travel, 0.0)
    idle = np.diag(state.e)
    stray = idle[~saturated].max() if np.any(~saturated) else 0.0
    parked = abs(idle[saturated].sum() - point.m_bar)
    return float(max(np.abs(state.f - point.f_bar).max(), travel.max(), stray, parked))


def integrate(
    state0: FluidState,
    params: NetworkParams,
    routing: RoutingMatrix,
    t_end: float,
    dt: Optional[float] = None,
    record_interval: Optional[float] = None,
    point: Optional[EquilibriumPoint] = None,
) -> FluidTrajectory:
    """
    Projected explicit Euler integration of the fluid model

    Args:
        state0: Initial state on the simplex
        params: Market primitives
        routing: Static routing matrix
        t_end: Final time
        dt: Euler step, defaults to the configured step
        record_interval: Spacing of recorded states
        point: Equilibrium used for V and distance; computed when omitted

    Returns:
        FluidTrajectory with states, cumulative regulator and diagnostics
    """
    settings = get_settings()
    dt = settings.ode_dt if dt is None else dt
    record_interval = settings.ode_record_interval if record_interval is None else record_interval
    if dt <= 0 or t_end < 0:
        raise ValueError("dt must be positive and t_end nonnegative")

    if abs(state0.total_mass - 1.0) > settings.fluid_mass_tol:
        raise FluidIntegrationError(f"initial mass {state0.total_mass:.9f} is not 1")

    if point is None:
        try:
            point = equilibrium_point(params, routing)
        except ReducibleChainError as e:
            logger.warning(f"No equilibrium diagnostics: {e}")

    mu, lam, q = params.mu, params.lam, routing.q
    q_diag = np.diag(q).copy()
    route = params.route_rate
    r = params.r
    diag = np.arange(r)

    e = np.array(state0.e, dtype=float)
    f = np.array(state0.f, dtype=float)
    u = np.zeros(r)

    n_steps = int(np.ceil(t_end / dt - 1e-9))
    record_every = max(1, int(round(record_interval / dt)))

    times, states, u_rows, masses, v_values, distances = [], [], [], [], [], []
    complementarity = 0.0
    max_increase = 0.0

    def record(t: float, v_now: Optional[float]) -> None:
        snapshot = FluidState(e=e.copy(), f=f.copy())
        times.append(t)
        states.append(snapshot)
        u_rows.append(u.copy())
        masses.append(e.sum() + f.sum())
        if point is not None:
            v_values.append(v_now)
            distances.append(distance_to_equilibrium(snapshot, point))

    saturated = point.a_bar >= 1.0 - settings.saturation_tol if point is not None else None
    v_prev = lyapunov_from_arrays(point, e, f, saturated) if point is not None else None
    record(0.0, v_prev)

    for step in range(1, n_steps + 1):
        full_in, inflow = _inflows(e, f, mu, q_diag)
        idle = e[diag, diag]

        # Raise u_dot just enough to keep e_ii from crossing zero within the step
        candidate = idle + dt * (inflow - lam)
        u_dot = np.where(candidate < 0.0, np.clip(1.0 - (inflow + idle / dt) / lam, 0.0, 1.0), 0.0)
        served = lam * (1.0 - u_dot)

        df = route * (1.0 - u_dot)[:, None] - mu * f
        de = -mu * e + q * full_in[:, None]
        de[diag, diag] = inflow - served

        e = e + dt * de
        f = f + dt * df

        np.clip(e, 0.0, 1.0, out=e)
        np.clip(f, 0.0, 1.0, out=f)
        mass = e.sum() + f.sum()
        if abs(mass - 1.0) > settings.ode_max_mass_drift:
            logger.error(f"Mass drift {abs(mass - 1.0):.3e} at step {step}, t={step * dt:.4f}")
            raise FluidIntegrationError(
                f"mass drifted to {mass:.9f} at t={step * dt:.4f}; reduce dt (currently {dt})"
            )
        e /= mass
        f /= mass

        du = u_dot * dt
        u += du
        complementarity += float(e[diag, diag] @ du)

        v_now = None
        if point is not None:
            v_now = lyapunov_from_arrays(point, e, f, saturated)
            max_increase = max(max_increase, v_now - v_prev)
            v_prev = v_now

        if step % record_every == 0 or step == n_steps:
            record(step * dt, v_now)

    logger.info(f"Integrated fluid model to t={n_steps * dt:.3f} in {n_steps} steps")
    return FluidTrajectory(
        times=np.asarray(times),
        states=states,
        u=np.asarray(u_rows),
        mass=np.asarray(masses),
        lyapunov=np.asarray(v_values) if point is not None else None,
        distance=np.asarray(distances) if point is not None else None,
        max_lyapunov_increase=max_increase,
        complementarity=complementarity,
        steps=n_steps,
    )


# ---------------------------------------------------------------------------
# Initial conditions
# ---------------------------------------------------------------------------

def idle_state(r: int, region: int = 0) -> FluidState:
    """All mass idle at one region"""
    e = np.zeros((r, r))
    e[region, region] = 1.0
    return FluidState(e=e, f=np.zeros((r, r)))


def random_fluid_state(r: int, seed: int) -> FluidState:
    """Uniform draw from the simplex of 2r^2 coordinates"""
    rng = np.random.default_rng(seed)
    mass = rng.dirichlet(np.ones(2 * r * r))
    return FluidState(e=mass[: r * r].reshape(r, r), f=mass[r * r:].reshape(r, r))


def from_equilibrium(point: EquilibriumPoint) -> FluidState:
    return FluidState(e=point.e_bar, f=point.f_bar)
