"""
Fluid equilibrium of a static routing matrix and its Lyapunov function.
"""

import logging

import numpy as np

from ..core.config import get_settings
from ..core.exceptions import ReducibleChainError
from ..utils.models import EquilibriumPoint, FluidState, NetworkParams, RoutingMatrix

logger = logging.getLogger(__name__)


def routing_chain(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """B_ij = sum_l P_jl Q_li, the idle-to-idle chain in column-stochastic form"""
    return (np.asarray(p, dtype=float) @ np.asarray(q, dtype=float)).T


def is_irreducible(chain: np.ndarray, tol: float = 1e-14) -> bool:
    """Strong connectivity of the support graph of the chain"""
    adjacency = (np.asarray(chain) > tol).astype(int)
    r = adjacency.shape[0]
    reach = ((adjacency + np.eye(r, dtype=int)) > 0).astype(int)
    # Transitive closure by repeated squaring
    for _ in range(max(1, int(np.ceil(np.log2(max(r, 2)))))):
        reach = ((reach @ reach) > 0).astype(int)
    return bool(np.all(reach > 0))


def stationary_vector(chain: np.ndarray) -> np.ndarray:
    """Probability vector x with B x = x, from a dense solve with one row replaced by the normalization"""
    r = chain.shape[0]
    system = np.eye(r) - chain
    system[-1, :] = 1.0
    rhs = np.zeros(r)
    rhs[-1] = 1.0
    x = np.linalg.solve(system, rhs)
    return np.clip(x, 0.0, None) / np.clip(x, 0.0, None).sum()


def _cycle_cost(params: NetworkParams, q: np.ndarray) -> np.ndarray:
    """Fluid mass tied up per unit availability: full legs plus the empty legs they trigger"""
    mean_travel = params.mean_travel
    full_leg = (params.p * mean_travel).sum(axis=1)
    off_diag = q * mean_travel
    np.fill_diagonal(off_diag, 0.0)
    empty_leg = params.p @ off_diag.sum(axis=1)
    return params.lam * (full_leg + empty_leg)


def equilibrium_point(params: NetworkParams, routing: RoutingMatrix) -> EquilibriumPoint:
    """
    Equilibrium availabilities and fluid masses for a static routing matrix

    Args:
        params: Market primitives
        routing: Static row-stochastic routing matrix Q

    Returns:
        EquilibriumPoint with idle mass split over saturated regions in proportion to lambda
    """
    settings = get_settings()
    q = routing.q
    chain = routing_chain(params.p, q)
    if not is_irreducible(chain):
        raise ReducibleChainError("routing chain B is reducible; the equilibrium is not unique")

    x = stationary_vector(chain)
    a_star = x / params.lam
    a_star = a_star / a_star.max()

    cost = _cycle_cost(params, q)
    loaded = float(cost @ a_star)
    if loaded > 1.0:
        scale = 1.0 / loaded
        m_bar = 0.0
    else:
        scale = 1.0
        m_bar = 1.0 - loaded
    a_bar = scale * a_star

    f_bar = params.route_rate * a_bar[:, None] / params.mu
    full_in = (params.mu * f_bar).sum(axis=0)
    e_bar = q * full_in[:, None] / params.mu
    np.fill_diagonal(e_bar, 0.0)

    saturated = np.flatnonzero(a_bar >= 1.0 - settings.saturation_tol)
    if m_bar > 0 and saturated.size:
        weights = params.lam[saturated] / params.lam[saturated].sum()
        e_bar[saturated, saturated] = m_bar * weights

    logger.debug(f"Equilibrium: scale {scale:.6f}, idle mass {m_bar:.6f}, saturated {saturated.tolist()}")
    return EquilibriumPoint(
        a_bar=a_bar,
        e_bar=e_bar,
        f_bar=f_bar,
        m_bar=m_bar,
        chain_matrix=chain,
        saturated=tuple(int(i) for i in saturated),
    )


def residuals(point: EquilibriumPoint, params: NetworkParams, routing: RoutingMatrix) -> float:
    """Max-norm residual of the equilibrium equations, complementarity and mass"""
    q = routing.q
    a_bar, e_bar, f_bar = point.a_bar, point.e_bar, point.f_bar
    mu = params.mu

    full = np.abs(params.route_rate * a_bar[:, None] - mu * f_bar)
    full_in = (mu * f_bar).sum(axis=0)

    empty = np.abs(mu * e_bar - q * full_in[:, None])
    np.fill_diagonal(empty, 0.0)

    empty_arrivals = (mu * e_bar).sum(axis=0) - np.diag(mu * e_bar)
    balance = np.abs(params.lam * a_bar - empty_arrivals - np.diag(q) * full_in)

    complement = np.abs((1.0 - a_bar) * np.diag(e_bar))
    mass = abs(e_bar.sum() + f_bar.sum() - 1.0)
    negative = max(0.0, -float(min(e_bar.min(), f_bar.min())))
    box = max(0.0, float(-a_bar.min()), float(a_bar.max() - 1.0))

    return float(max(full.max(), empty.max(), balance.max(), complement.max(), mass, negative, box))


def _saturated_mask(point: EquilibriumPoint) -> np.ndarray:
    return point.a_bar >= 1.0 - get_settings().saturation_tol


def lyapunov(point: EquilibriumPoint, state: FluidState) -> float:
    """
    L1 distance to the equilibrium set

    Idle mass at saturated regions counts only through its total, since
    the equilibrium leaves its split free.
    """
    return lyapunov_from_arrays(point, state.e, state.f, _saturated_mask(point))


def lyapunov_from_arrays(point: EquilibriumPoint, e: np.ndarray, f: np.ndarray, saturated: np.ndarray) -> float:
    full = np.abs(f - point.f_bar).sum()
    travel = np.abs(e - point.e_bar)
    np.fill_diagonal(travel, 0.0)
    idle = np.diag(e)
    stray_idle = idle[~saturated].sum()
    parked = abs(point.m_bar - idle[saturated].sum())
    return float(full + travel.sum() + stray_idle + parked)
