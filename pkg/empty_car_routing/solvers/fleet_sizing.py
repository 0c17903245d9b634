"""
Minimum fluid mass for perfect availability.

With every region fully available the full-car masses are pinned to
f_ij = lambda_i P_ij / mu_ij, and the only freedom is where empty cars
drive. kappa is the smallest total mass that can serve all demand; kappa > 1
means the current fleet is too small for 100% availability.
"""

import logging
from typing import Tuple

import numpy as np

from ..core.config import get_settings
from ..utils.models import FleetSizingResult, NetworkParams, RoutingMatrix
from .linprog import LpBuilder, require_optimal, solve

logger = logging.getLogger(__name__)


def full_masses(params: NetworkParams) -> np.ndarray:
    return params.route_rate / params.mu


def full_arrivals(params: NetworkParams) -> np.ndarray:
    """D_i: rate at which full cars drop off at region i"""
    return params.route_rate.sum(axis=0)


def empty_masses(q: np.ndarray, params: NetworkParams) -> np.ndarray:
    e = q * full_arrivals(params)[:, None] / params.mu
    np.fill_diagonal(e, 0.0)
    return e


def total_mass(q: np.ndarray, params: NetworkParams) -> float:
    return float(full_masses(params).sum() + empty_masses(q, params).sum())


def fleet_residual(q: np.ndarray, params: NetworkParams) -> float:
    """Max violation of perfect-availability balance and row-stochasticity for a routing matrix"""
    arrivals = full_arrivals(params)
    e = empty_masses(q, params)
    idle_inflow = (params.mu * e).sum(axis=0) + np.diag(q) * arrivals
    balance = np.abs(idle_inflow - params.lam)
    rows = np.abs(q.sum(axis=1) - 1.0)
    negative = max(0.0, -float(q.min()))
    return float(max(balance.max(), rows.max(), negative))


def backhaul_routing(params: NetworkParams) -> RoutingMatrix:
    """Send each car back along the reverse of a passenger leg: q_ij proportional to lambda_j P_ji"""
    arrivals = full_arrivals(params)
    q = np.eye(params.r)
    served = arrivals > 0
    q[served] = params.route_rate.T[served] / arrivals[served, None]
    return RoutingMatrix(q=q)


def triangle_inequality_holds(params: NetworkParams, tol: float = 1e-12) -> bool:
    mean_travel = params.mean_travel
    r = params.r
    for j in range(r):
        via_j = mean_travel[:, j][:, None] + mean_travel[j, :][None, :]
        mask = np.ones((r, r), dtype=bool)
        mask[j, :] = False
        mask[:, j] = False
        np.fill_diagonal(mask, False)
        if np.any(mean_travel[mask] > via_j[mask] + tol):
            return False
    return True


def _q_index(i: int, j: int, r: int) -> int:
    return i * r + j


def min_fleet(params: NetworkParams) -> FleetSizingResult:
    """
    Solve the fleet-sizing LP over routing q and empty masses e

    Args:
        params: Market primitives

    Returns:
        FleetSizingResult with kappa and an optimal routing matrix
    """
    r = params.r
    arrivals = full_arrivals(params)
    f = full_masses(params)

    off_diagonal = [(i, j) for i in range(r) for j in range(r) if i != j]
    e_index = {pair: r * r + k for k, pair in enumerate(off_diagonal)}
    lp = LpBuilder(r * r + len(off_diagonal))
    for column in e_index.values():
        lp.objective[column] = -1.0

    # Empty departures follow the routing of dropped-off cars
    for (i, j), column in e_index.items():
        row = lp.row()
        row[column] = params.mu[i, j]
        row[_q_index(i, j, r)] = -arrivals[i]
        lp.add_row(row, "=", 0.0)

    # Every region receives exactly its demand in idle cars
    for i in range(r):
        row = lp.row()
        for k in range(r):
            if k != i:
                row[e_index[(k, i)]] = params.mu[k, i]
        row[_q_index(i, i, r)] = arrivals[i]
        lp.add_row(row, "=", params.lam[i])

    for i in range(r):
        row = lp.row()
        row[i * r:(i + 1) * r] = 1.0
        lp.add_row(row, "=", 1.0)

    backhaul = backhaul_routing(params)
    backhaul_residual = fleet_residual(backhaul.q, params)
    if backhaul_residual > 1e-8:
        logger.warning(f"Back-haul routing residual {backhaul_residual:.3e}; the scenario may be degenerate")

    solution = require_optimal(solve(lp.build()), "fleet-sizing LP")
    q = np.clip(solution.x[: r * r].reshape(r, r), 0.0, None)
    q = q / q.sum(axis=1, keepdims=True)
    e = empty_masses(q, params)
    kappa = float(f.sum() + e.sum())

    logger.info(f"Fleet sizing: kappa {kappa:.6f} ({'undersupply' if kappa > 1 else 'oversupply'})")
    return FleetSizingResult(
        kappa=kappa,
        q_kappa=RoutingMatrix(q=q),
        e_kappa=e,
        f_kappa=f,
        triangle_ok=triangle_inequality_holds(params),
        backhaul_kappa=total_mass(backhaul.q, params),
    )


def _smallest_shift_pair(q: np.ndarray, e: np.ndarray, i: int, tol: float) -> Tuple[int, int]:
    sources = [l for l in range(q.shape[0]) if l != i and e[l, i] > tol]
    targets = [m for m in range(q.shape[0]) if m != i and q[i, m] > tol]
    if not sources or not targets:
        return -1, -1
    return sources[0], targets[0]


def repair_diagonal(result: FleetSizingResult, params: NetworkParams) -> FleetSizingResult:
    """
    Shift routing mass so every region keeps some of its own dropped-off cars

    For region i with q_ii = 0 the shift takes eps from the empty leg l->i
    and the matching rho * eps from i->m, re-routing l->m directly and
    letting i keep rho * eps of its arrivals. Under the triangle inequality
    the total mass does not grow.
    """
    if not result.triangle_ok:
        logger.warning("Triangle inequality fails for mean travel times; skipping diagonal repair")
        return result

    tol = 1e-12
    arrivals = full_arrivals(params)
    q = np.array(result.q_kappa.q)
    changed = False

    for i in range(params.r):
        if q[i, i] > tol:
            continue
        if arrivals[i] <= 0:
            logger.warning(f"Region {i + 1} receives no passengers; its diagonal cannot be repaired")
            continue
        e = empty_masses(q, params)
        source, target = _smallest_shift_pair(q, e, i, tol)
        if source < 0:
            logger.warning(f"No admissible shift for region {i + 1}; leaving q_ii at zero")
            continue
        ratio = arrivals[source] / arrivals[i]
        eps = 0.5 * min(q[source, i], q[i, target] / ratio)
        q[source, i] -= eps
        q[source, target] += eps
        q[i, target] -= eps * ratio
        q[i, i] += eps * ratio
        changed = True
        logger.debug(f"Repaired region {i + 1}: shift {eps:.6g} via {source + 1} -> {target + 1}")

    if not changed:
        return result

    e = empty_masses(q, params)
    kappa = float(result.f_kappa.sum() + e.sum())
    if kappa > result.kappa + get_settings().lp_feasibility_tol:
        logger.warning(f"Diagonal repair raised kappa from {result.kappa:.9f} to {kappa:.9f}")
    return result.model_copy(update={
        "kappa": kappa,
        "q_kappa": RoutingMatrix(q=q),
        "e_kappa": _frozen(e),
        "repaired": True,
    })


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array
