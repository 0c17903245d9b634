"""
Exact mean value analysis of the closed car network under a static routing matrix.

Each car cycles through three kinds of stations: idle(i), a single server
whose service is the passenger clock of region i (rate N * lambda_i); full(i,j),
an infinite server for a trip with a passenger; and empty(i,j), an infinite
server for a repositioning trip.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ScenarioError, SolverError
from ..utils.models import MvaResult, NetworkParams, RoutingMatrix, Station, StationLayout
from .equilibrium import is_irreducible, routing_chain, stationary_vector

logger = logging.getLogger(__name__)

VISIT_PRUNE_TOL = 1e-14


def station_layout(params: NetworkParams, routing: RoutingMatrix) -> StationLayout:
    """
    Map the car network onto stations with visit ratios

    Stations never visited under the routing matrix are pruned. Visit
    ratios are normalized so the first visited idle station has ratio 1.
    """
    r = params.r
    q = routing.q
    chain = routing_chain(params.p, q)
    if not is_irreducible(chain):
        raise SolverError("station network is not irreducible under this routing matrix")

    v_idle = stationary_vector(chain)
    v_full = v_idle[:, None] * params.p
    arrivals = v_full.sum(axis=0)
    v_empty = arrivals[:, None] * q
    np.fill_diagonal(v_empty, 0.0)

    candidates: List[Tuple[Station, float]] = []
    for i in range(r):
        candidates.append((Station(kind="single_server", rate=params.n_cars * params.lam[i],
                                   label=f"idle({i + 1})", origin=i, destination=i), v_idle[i]))
    for i in range(r):
        for j in range(r):
            candidates.append((Station(kind="infinite_server", rate=params.mu[i, j],
                                       label=f"full({i + 1},{j + 1})", origin=i, destination=j), v_full[i, j]))
    for i in range(r):
        for j in range(r):
            if i != j:
                candidates.append((Station(kind="infinite_server", rate=params.mu[i, j],
                                           label=f"empty({i + 1},{j + 1})", origin=i, destination=j), v_empty[i, j]))

    kept = [(station, visits) for station, visits in candidates if visits > VISIT_PRUNE_TOL]
    stations = [station for station, _ in kept]
    visits = np.array([v for _, v in kept])

    reference = next(v for station, v in kept if station.kind == "single_server")
    visits = visits / reference

    index = {station.label: k for k, station in enumerate(stations)}
    transitions = np.zeros((len(stations), len(stations)))
    for k, station in enumerate(stations):
        i, j = station.origin, station.destination
        if station.kind == "single_server":
            for dest in range(r):
                target = index.get(f"full({i + 1},{dest + 1})")
                if target is not None:
                    transitions[k, target] += params.p[i, dest]
        elif station.label.startswith("full"):
            for dest in range(r):
                label = f"idle({j + 1})" if dest == j else f"empty({j + 1},{dest + 1})"
                target = index.get(label)
                if target is not None:
                    transitions[k, target] += q[j, dest]
        else:
            transitions[k, index[f"idle({j + 1})"]] = 1.0

    idle_index = {s.origin: k for k, s in enumerate(stations) if s.kind == "single_server"}
    logger.debug(f"Station layout: {len(stations)} of {len(candidates)} stations visited")
    return StationLayout(stations=stations, visit_ratios=visits, routing=transitions, idle_index=idle_index)


def _recursion(layout: StationLayout, n_cars: int) -> Tuple[float, np.ndarray]:
    rates = np.array([s.rate for s in layout.stations])
    if np.any(rates <= 0):
        raise ScenarioError("station rates must be positive", field="rate")
    single = np.array([s.kind == "single_server" for s in layout.stations])
    visits = layout.visit_ratios

    queue = np.zeros(len(rates))
    throughput = 0.0
    for n in range(1, n_cars + 1):
        wait = np.where(single, (1.0 + queue) / rates, 1.0 / rates)
        throughput = n / float(visits @ wait)
        queue = throughput * visits * wait
        if abs(queue.sum() - n) > 1e-6 * max(1, n):
            raise SolverError(f"MVA population check failed at n={n}: {queue.sum():.9f}")
    return throughput, queue


def analyze(params: NetworkParams, routing: RoutingMatrix, n_cars: Optional[int] = None) -> MvaResult:
    """
    Exact MVA at population N

    Args:
        params: Market primitives
        routing: Static routing matrix
        n_cars: Population, defaults to params.n_cars

    Returns:
        MvaResult with per-region availability P(E_ii > 0)
    """
    n_cars = params.n_cars if n_cars is None else int(n_cars)
    if n_cars < 1:
        raise ScenarioError("MVA needs at least one car", field="n_cars")
    params = params.with_fleet(n_cars)
    layout = station_layout(params, routing)
    throughput, queue = _recursion(layout, n_cars)

    availability = np.zeros(params.r)
    for region, k in layout.idle_index.items():
        availability[region] = throughput * layout.visit_ratios[k] / (n_cars * params.lam[region])

    logger.info(f"MVA at N={n_cars}: availability {np.round(availability, 4).tolist()}")
    return MvaResult(
        n_cars=n_cars,
        availability=availability,
        mean_queue=queue,
        throughput=throughput,
        labels=[s.label for s in layout.stations],
    )


def availability_curve(params: NetworkParams, routing: RoutingMatrix, n_list: Sequence[int]) -> List[Tuple[int, np.ndarray]]:
    """Availability at each population; idle rates scale with N so each point is its own recursion"""
    return [(int(n), analyze(params, routing, int(n)).availability) for n in n_list]
