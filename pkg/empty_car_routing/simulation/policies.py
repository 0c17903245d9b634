"""
Empty-car routing policies.

A policy is consulted every time a full car drops its passenger at region j
and returns the region the now-empty car should head to (j itself means
stay). Policies read the state but never modify it.
"""

import bisect
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..utils.models import NetworkParams, RoutingMatrix, SystemState

logger = logging.getLogger(__name__)


def _cumulative_rows(q: np.ndarray) -> List[List[float]]:
    return [np.cumsum(row).tolist() for row in q]


def _sample_row(cumulative: List[float], u: float) -> int:
    index = bisect.bisect_right(cumulative, u * cumulative[-1])
    return min(index, len(cumulative) - 1)


def _pick_uniform(candidates: Sequence[int], rng) -> int:
    if len(candidates) == 1:
        return candidates[0]
    return candidates[min(int(rng.uniform() * len(candidates)), len(candidates) - 1)]


def _argmin_ties(values: np.ndarray, exclude: int, rtol: float = 1e-12) -> Tuple[float, List[int]]:
    masked = np.array(values, dtype=float)
    masked[exclude] = np.inf
    best = float(masked.min())
    tied = np.flatnonzero(masked <= best + rtol * max(1.0, abs(best))).tolist()
    return best, tied


class RoutingPolicy:
    """Base class; subclasses implement decide"""

    name = "policy"

    def decide(self, region: int, state: SystemState, params: NetworkParams, time: float, rng) -> int:
        raise NotImplementedError


class StaticPolicy(RoutingPolicy):
    """Sample the destination from a fixed routing matrix, ignoring the state"""

    name = "static"

    def __init__(self, routing: RoutingMatrix):
        self.routing = routing
        self._cumulative = _cumulative_rows(routing.q)

    def decide(self, region, state, params, time, rng) -> int:
        return _sample_row(self._cumulative[region], rng.uniform())


class JlcrPolicy(RoutingPolicy):
    """
    Join the least congested region, with threshold eta

    Congestion of region i counts cars idle at i plus empty cars heading
    there, per unit of demand. The car stays unless its own region is more
    congested than the best alternative by more than a factor 1/(1 - eta).
    """

    def __init__(self, eta: float):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {eta}")
        self.eta = eta
        self.name = f"jlcr:{eta:g}"

    def decide(self, region, state, params, time, rng) -> int:
        if params.r == 1:
            return region
        congestion = state.e_count.sum(axis=0) / params.lam
        best, tied = _argmin_ties(congestion, exclude=region)
        if (1.0 - self.eta) * congestion[region] <= best:
            return region
        return _pick_uniform(tied, rng)


class ShortestWaitPolicy(RoutingPolicy):
    """Move to the region with the shortest estimated wait until the next pickup"""

    name = "sw"

    def decide(self, region, state, params, time, rng) -> int:
        if params.r == 1:
            return region
        e = state.e_count
        demand = params.n_cars * params.lam
        own_wait = e[region, region] / demand[region]
        if own_wait == 0:
            return region

        travel = params.mean_travel[region]
        moving = params.mu * e
        # Empty cars already heading to j, excluding those idle there
        incoming = moving.sum(axis=0) - np.diag(moving)
        queue_ahead = np.diag(e) + travel * incoming - demand * travel
        wait = travel + np.maximum(queue_ahead, 0.0) / demand

        best, tied = _argmin_ties(wait, exclude=region)
        if own_wait <= best:
            return region
        return _pick_uniform(tied, rng)


class LookaheadPolicy(RoutingPolicy):
    """Static sampling from the routing matrix of the latest table epoch at or before the decision time"""

    def __init__(self, table: Sequence[Tuple[float, RoutingMatrix]], name: str = "lookahead"):
        if not table:
            raise ValueError("lookahead table is empty")
        ordered = sorted(table, key=lambda entry: entry[0])
        self.times = [float(t) for t, _ in ordered]
        self._cumulative = [_cumulative_rows(routing.q) for _, routing in ordered]
        self.name = name

    def active_index(self, time: float) -> int:
        return max(0, bisect.bisect_right(self.times, time) - 1)

    def decide(self, region, state, params, time, rng) -> int:
        return _sample_row(self._cumulative[self.active_index(time)][region], rng.uniform())


def policy_static(routing: RoutingMatrix) -> StaticPolicy:
    return StaticPolicy(routing)


def policy_jlcr(eta: float) -> JlcrPolicy:
    return JlcrPolicy(eta)


def policy_sw() -> ShortestWaitPolicy:
    return ShortestWaitPolicy()


def policy_lookahead(table: Sequence[Tuple[float, RoutingMatrix]], name: Optional[str] = None) -> LookaheadPolicy:
    return LookaheadPolicy(table, name=name or "lookahead")
