"""
Scenario construction, validation and file I/O.

Built-in scenarios carry the published two-region, nine-region and
five-region market data. Rates are stored per car: region i sees
requests at rate N * lambda_i.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..core.config import get_settings
from ..core.exceptions import ScenarioError
from .models import NetworkParams, RoutingMatrix, Schedule, ScheduleSlot, Violation

logger = logging.getLogger(__name__)

Scenario = Union[NetworkParams, Schedule]

BUILTIN_NAMES = ("two_region", "nine_region_didi", "five_region_city", "nine_region_surge")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(params: NetworkParams, tol: Optional[float] = None) -> List[Violation]:
    """
    Check the invariants of a parameter set without raising

    Args:
        params: Market primitives to check
        tol: Row-sum tolerance for P, defaults to the configured load tolerance

    Returns:
        One Violation per broken invariant, empty when params are valid
    """
    tol = get_settings().stochastic_tol if tol is None else tol
    violations: List[Violation] = []

    if params.n_cars < 1:
        violations.append(Violation(field="n_cars", residual=float(1 - params.n_cars),
                                    message=f"n_cars {params.n_cars} is below 1"))

    for i, value in enumerate(params.lam):
        if not value > 0:
            violations.append(Violation(field="lambda", index=(i,), residual=float(-value),
                                        message=f"lambda[{i}] not positive"))

    for (i, j), value in np.ndenumerate(params.mu):
        if not value > 0:
            violations.append(Violation(field="mu", index=(i, j), residual=float(-value),
                                        message=f"mu[{i}][{j}] not positive"))

    for (i, j), value in np.ndenumerate(params.p):
        if value < 0:
            violations.append(Violation(field="p", index=(i, j), residual=float(-value),
                                        message=f"p[{i}][{j}] is negative"))
    for i, total in enumerate(params.p.sum(axis=1)):
        residual = abs(1.0 - total)
        if residual > tol:
            violations.append(Violation(field="p", index=(i,), residual=float(residual),
                                        message=f"p row {i} sums to {total:.12g}, residual {residual:.3g}"))

    if params.rewards is not None:
        for (i, j), value in np.ndenumerate(params.rewards):
            if value < 0:
                violations.append(Violation(field="rewards", index=(i, j), residual=float(-value),
                                            message=f"rewards[{i}][{j}] is negative"))

    return violations


def validate_routing(routing: RoutingMatrix, r: Optional[int] = None, tol: Optional[float] = None) -> List[Violation]:
    tol = get_settings().stochastic_tol if tol is None else tol
    violations: List[Violation] = []
    if r is not None and routing.r != r:
        violations.append(Violation(field="q", residual=float(abs(routing.r - r)),
                                    message=f"routing matrix is {routing.r}x{routing.r}, expected {r}x{r}"))
        return violations
    if np.any(routing.q < 0):
        i, j = np.argwhere(routing.q < 0)[0]
        violations.append(Violation(field="q", index=(int(i), int(j)), residual=float(-routing.q[i, j]),
                                    message=f"q[{i}][{j}] is negative"))
    for i, total in enumerate(routing.q.sum(axis=1)):
        residual = abs(1.0 - total)
        if residual > tol:
            violations.append(Violation(field="q", index=(i,), residual=float(residual),
                                        message=f"q row {i} sums to {total:.12g}"))
    return violations


def ensure_valid(scenario: Scenario) -> Scenario:
    """Raise ScenarioError on the first violation of any slot"""
    for params in _params_of(scenario):
        violations = validate(params)
        if violations:
            first = violations[0]
            raise ScenarioError(f"invalid scenario: {first.message}", field=first.field)
    return scenario


def _params_of(scenario: Scenario) -> List[NetworkParams]:
    if isinstance(scenario, Schedule):
        return [slot.params for slot in scenario.slots]
    return [scenario]


# ---------------------------------------------------------------------------
# Built-in data
# ---------------------------------------------------------------------------

def _split_routes(lam: List[float], rows: List[List[float]]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Turn published (lambda, P) with rounded P rows into a valid pair

    Route demands lambda_i * P_ij are kept as published; lambda_i absorbs the
    row sum and P_i. is divided by it, the same split `perturb` uses.
    """
    route = np.asarray(lam, dtype=float)[:, None] * np.asarray(rows, dtype=float)
    lam_hat = route.sum(axis=1)
    return lam_hat, route / lam_hat[:, None]


_DIDI_P = [
    [0.230, 0.297, 0.372, 0.004, 0.026, 0.029, 0.009, 0.018, 0.015],
    [0.044, 0.655, 0.146, 0.005, 0.079, 0.038, 0.018, 0.005, 0.011],
    [0.165, 0.291, 0.288, 0.007, 0.054, 0.126, 0.017, 0.025, 0.027],
    [0.0013, 0.010, 0.006, 0.139, 0.031, 0.185, 0.101, 0.117, 0.409],
    [0.005, 0.096, 0.026, 0.037, 0.25, 0.333, 0.218, 0.012, 0.027],
    [0.004, 0.031, 0.032, 0.088, 0.121, 0.426, 0.148, 0.059, 0.092],
    [0.002, 0.023, 0.011, 0.066, 0.142, 0.269, 0.399, 0.020, 0.069],
    [0.004, 0.008, 0.023, 0.067, 0.011, 0.095, 0.019, 0.400, 0.374],
    [0.001, 0.004, 0.005, 0.095, 0.010, 0.059, 0.030, 0.185, 0.610],
]

_DIDI_MEAN_TRAVEL = [
    [0.83, 1.87, 1.07, 3.89, 3.25, 2.79, 4.25, 2.94, 4.37],
    [1.78, 0.89, 1.18, 3.24, 1.24, 1.99, 2.89, 3.46, 4.18],
    [1.02, 1.31, 0.78, 2.82, 1.45, 1.36, 3.26, 2.17, 3.04],
    [3.52, 3.13, 2.76, 0.93, 1.5, 1.26, 1.49, 1.75, 1.6],
    [2.86, 1.42, 1.64, 1.55, 0.84, 1.04, 1.45, 2.88, 2.89],
    [2.61, 2.17, 1.54, 1.31, 1.15, 0.81, 1.86, 1.78, 2.2],
    [4.38, 3.02, 2.79, 1.36, 1.35, 1.65, 0.94, 3.1, 3],
    [2.93, 3.06, 2.26, 1.75, 2.69, 1.62, 3.23, 0.9, 1.48],
    [3.58, 4.18, 2.8, 1.49, 2.46, 2.02, 2.72, 1.43, 1.01],
]

# Region labels 10, 11, 18, 13, 19, 27, 45, 47, 50; time unit is 10 minutes
_DIDI_LAMBDA = [0.0131, 0.0624, 0.0381, 0.0652, 0.0870, 0.1178, 0.0762, 0.1438, 0.2751]
_DIDI_PEAK_LAMBDA = [0.0131, 0.0624, 0.1178, 0.0870, 0.0652, 0.0381, 0.0762, 0.2751, 0.1438]

# Regions S1, S2, S3, M, D; time unit is one hour
_CITY_SLOTS = [
    {
        "start": 17.0, "end": 19.0,
        "lambda": [0.108, 0.108, 0.108, 0.108, 1.08],
        "p": [[.6, .1, 0, .3, 0], [.1, .6, 0, .3, 0], [0, 0, .7, .3, 0], [.2, .2, .2, .2, .2], [.3, .3, .3, .1, 0]],
        "mean_travel": [[.15, .25, 1.25, .2, .4], [.25, .10, 1.1, .1, .3], [1.25, 1.1, .1, 1, .65],
                        [.25, .15, 1, .15, .25], [.5, .4, .75, .25, .2]],
    },
    {
        "start": 19.0, "end": 21.0,
        "lambda": [.72, .48, .48, .48, .12],
        "p": [[.1, 0, 0, .9, 0], [0, .1, 0, .9, 0], [0, 0, .1, .9, 0], [.05, .05, .05, .8, .05], [0, 0, 0, .9, .1]],
        "mean_travel": [[.15, .25, 1.25, .2, .4], [.25, .10, 1.1, .1, .3], [1.25, 1.1, .1, 1, .65],
                        [.2, .1, 1, .15, .25], [.4, .3, .65, .25, .2]],
    },
    {
        "start": 21.0, "end": 23.0,
        "lambda": [.12, .12, .12, 1.32, .12],
        "p": [[.9, .05, 0, .05, 0], [.05, .9, 0, .05, 0], [0, 0, .9, .1, 0], [.3, .3, .3, .05, .05], [0, 0, 0, .1, .9]],
        "mean_travel": [[.15, .25, 1.25, .2, .4], [.25, .10, 1.1, .1, .3], [1.25, 1.1, .1, 1, .65],
                        [.2, .1, 1, .15, .25], [.4, .3, .65, .25, .2]],
    },
]


def _two_region() -> NetworkParams:
    n_cars = 1200
    region_rates = np.array([800.0, 400.0])
    return NetworkParams(
        r=2,
        n_cars=n_cars,
        lam=region_rates / n_cars,
        mu=np.ones((2, 2)),
        p=[[0.0, 1.0], [1.0, 0.0]],
    )


def _nine_region(lam: List[float], n_cars: int = 2000) -> NetworkParams:
    lam_hat, p = _split_routes(lam, _DIDI_P)
    return NetworkParams(
        r=9,
        n_cars=n_cars,
        lam=lam_hat,
        mu=1.0 / np.asarray(_DIDI_MEAN_TRAVEL),
        p=p,
    )


def _five_region_city() -> Schedule:
    slots = []
    for slot in _CITY_SLOTS:
        lam, p = _split_routes(slot["lambda"], slot["p"])
        params = NetworkParams(r=5, n_cars=1000, lam=lam, mu=1.0 / np.asarray(slot["mean_travel"]), p=p)
        slots.append(ScheduleSlot(start=slot["start"], end=slot["end"], params=params))
    return Schedule(slots=slots, travel_time_mode="deterministic", units_per_hour=1.0)


def _nine_region_surge() -> Schedule:
    # Four hours in 10-minute units: a quiet first half, then the peak pattern
    quiet = _nine_region((0.3 * np.asarray(_DIDI_LAMBDA)).tolist())
    peak = _nine_region((0.85 * np.asarray(_DIDI_PEAK_LAMBDA)).tolist())
    return Schedule(
        slots=[ScheduleSlot(start=0.0, end=12.0, params=quiet), ScheduleSlot(start=12.0, end=24.0, params=peak)],
        travel_time_mode="deterministic",
        units_per_hour=6.0,
    )


def builtin_scenario(name: str) -> Scenario:
    """
    Build one of the published scenarios

    Args:
        name: two_region, nine_region_didi, five_region_city or nine_region_surge

    Returns:
        NetworkParams for static markets, Schedule for time-varying ones
    """
    builders = {
        "two_region": _two_region,
        "nine_region_didi": lambda: _nine_region(_DIDI_LAMBDA),
        "five_region_city": _five_region_city,
        "nine_region_surge": _nine_region_surge,
    }
    if name not in builders:
        raise ScenarioError(f"unknown built-in scenario '{name}', choose from {', '.join(BUILTIN_NAMES)}")
    return builders[name]()


# ---------------------------------------------------------------------------
# Robustness noise
# ---------------------------------------------------------------------------

def perturb(params: NetworkParams, sigma: float, seed: int) -> NetworkParams:
    """
    Multiply each route demand and each mean travel time by (1 +/- sigma)

    Route demands lambda_i * P_ij are perturbed jointly and split back into a
    per-region rate and a renormalized destination row.
    """
    if sigma < 0 or sigma >= 1:
        raise ScenarioError(f"sigma must lie in [0, 1), got {sigma}", field="sigma")
    if sigma == 0:
        return params

    rng = np.random.default_rng(seed)
    shape = (params.r, params.r)
    eta = rng.choice([-1.0, 1.0], size=shape)
    xi = rng.choice([-1.0, 1.0], size=shape)

    route = params.route_rate * (1.0 + sigma * eta)
    lam_hat = route.sum(axis=1)
    p_hat = route / lam_hat[:, None]
    mean_travel_hat = params.mean_travel * (1.0 + sigma * xi)

    return NetworkParams(
        r=params.r,
        n_cars=params.n_cars,
        lam=lam_hat,
        mu=1.0 / mean_travel_hat,
        p=p_hat,
        rewards=params.rewards,
    )


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("regions", "n_cars", "lambda", "mean_travel", "p")


def _matrix_field(data: Dict[str, Any], name: str, shape: Tuple[int, ...]) -> np.ndarray:
    try:
        value = np.asarray(data[name], dtype=float)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"'{name}' is not numeric: {e}", field=name)
    if value.shape != shape:
        raise ScenarioError(f"dimension mismatch: '{name}' has shape {value.shape}, expected {shape}", field=name)
    return value


def _params_from_dict(data: Dict[str, Any], r: int, n_cars: int, rewards: Optional[np.ndarray]) -> NetworkParams:
    for name in ("lambda", "mean_travel", "p"):
        if name not in data:
            raise ScenarioError(f"missing required field '{name}'", field=name)
    lam = _matrix_field(data, "lambda", (r,))
    mean_travel = _matrix_field(data, "mean_travel", (r, r))
    p = _matrix_field(data, "p", (r, r))
    if np.any(mean_travel <= 0):
        raise ScenarioError("mean travel times must be positive", field="mean_travel")
    try:
        return NetworkParams(r=r, n_cars=n_cars, lam=lam, mu=1.0 / mean_travel, p=p, rewards=rewards)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first.get("loc", ())) or None
        raise ScenarioError(f"invalid parameters: {first.get('msg')}", field=field)


def read_scenario_file(path: Union[str, Path]) -> Tuple[Scenario, Optional[RoutingMatrix]]:
    """Parse a scenario file and its optional routing matrix"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {e.msg}", line=e.lineno)
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must hold a JSON object")

    for name in _REQUIRED_FIELDS:
        if name not in data and not (name in ("lambda", "mean_travel", "p") and "schedule" in data):
            raise ScenarioError(f"missing required field '{name}'", field=name)

    try:
        r = int(data["regions"])
        n_cars = int(data["n_cars"])
    except (TypeError, ValueError):
        raise ScenarioError("'regions' and 'n_cars' must be integers", field="regions")
    if r < 1:
        raise ScenarioError("'regions' must be at least 1", field="regions")

    rewards = _matrix_field(data, "rewards", (r, r)) if data.get("rewards") is not None else None
    routing = None
    if data.get("q") is not None:
        routing = RoutingMatrix(q=_matrix_field(data, "q", (r, r)))

    mode = data.get("travel_time_mode", "exponential")
    if mode not in ("exponential", "deterministic"):
        raise ScenarioError(f"unknown travel_time_mode '{mode}'", field="travel_time_mode")

    if data.get("schedule"):
        slots = []
        for index, entry in enumerate(data["schedule"]):
            merged = {key: data[key] for key in ("lambda", "mean_travel", "p") if key in data}
            merged.update(entry)
            for key in ("start", "end"):
                if key not in entry:
                    raise ScenarioError(f"schedule entry {index} lacks '{key}'", field=f"schedule[{index}].{key}")
            slots.append(ScheduleSlot(start=float(entry["start"]), end=float(entry["end"]),
                                      params=_params_from_dict(merged, r, n_cars, rewards)))
        try:
            scenario: Scenario = Schedule(slots=slots, travel_time_mode=mode,
                                          units_per_hour=float(data.get("units_per_hour", 1.0)))
        except ValidationError as e:
            raise ScenarioError(f"invalid schedule: {e.errors()[0].get('msg')}", field="schedule")
    else:
        scenario = _params_from_dict(data, r, n_cars, rewards)

    ensure_valid(scenario)
    if routing is not None:
        violations = validate_routing(routing, r)
        if violations:
            raise ScenarioError(f"invalid routing matrix: {violations[0].message}", field="q")
    return scenario, routing


def load_scenario(path: Union[str, Path]) -> Scenario:
    scenario, _ = read_scenario_file(path)
    logger.info(f"Loaded scenario from {path}")
    return scenario


def resolve_scenario(ref: str) -> Tuple[Scenario, Optional[RoutingMatrix]]:
    """Accept either builtin:<name> or a path to a scenario file"""
    if ref.startswith("builtin:"):
        return builtin_scenario(ref.split(":", 1)[1]), None
    path = Path(ref)
    scenario_dir = get_settings().scenario_dir
    if not path.is_absolute() and not path.exists() and scenario_dir:
        path = Path(scenario_dir) / path
    return read_scenario_file(path)


def _params_payload(params: NetworkParams) -> Dict[str, Any]:
    return {
        "lambda": params.lam.tolist(),
        "mean_travel": params.mean_travel.tolist(),
        "p": params.p.tolist(),
    }


def save_scenario(scenario: Scenario, path: Union[str, Path], routing: Optional[RoutingMatrix] = None) -> Path:
    """Write a scenario in the JSON layout read by load_scenario"""
    path = Path(path)
    first = _params_of(scenario)[0]
    payload: Dict[str, Any] = {"regions": first.r, "n_cars": first.n_cars}
    payload.update(_params_payload(first))
    if first.rewards is not None:
        payload["rewards"] = first.rewards.tolist()
    if routing is not None:
        payload["q"] = routing.q.tolist()
    if isinstance(scenario, Schedule):
        payload["travel_time_mode"] = scenario.travel_time_mode
        payload["units_per_hour"] = scenario.units_per_hour
        payload["schedule"] = [
            {"start": slot.start, "end": slot.end, **_params_payload(slot.params)}
            for slot in scenario.slots
        ]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    logger.info(f"Saved scenario to {path}")
    return path


def load_routing(path: Union[str, Path], r: Optional[int] = None) -> RoutingMatrix:
    """Read a routing matrix from a JSON file holding a matrix or an object with 'q'"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioError(f"cannot read routing file {path}: {e}", field="q")
    except json.JSONDecodeError as e:
        raise ScenarioError(f"routing file {path} is not valid JSON: {e.msg}", field="q", line=e.lineno)
    matrix = data.get("q") if isinstance(data, dict) else data
    if matrix is None:
        raise ScenarioError("routing file has no 'q' matrix", field="q")
    try:
        routing = RoutingMatrix(q=matrix)
    except ValidationError as e:
        raise ScenarioError(f"invalid routing matrix: {e.errors()[0].get('msg')}", field="q")
    violations = validate_routing(routing, r)
    if violations:
        raise ScenarioError(f"invalid routing matrix: {violations[0].message}", field="q")
    return routing


def load_rewards(path: Union[str, Path], r: int) -> np.ndarray:
    """Read an r x r reward matrix from a JSON file holding a matrix or an object with 'rewards'"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ScenarioError(f"cannot read rewards file {path}: {e}", field="rewards")
    except json.JSONDecodeError as e:
        raise ScenarioError(f"rewards file {path} is not valid JSON: {e.msg}", field="rewards", line=e.lineno)
    matrix = data.get("rewards") if isinstance(data, dict) else data
    if matrix is None:
        raise ScenarioError("rewards file has no 'rewards' matrix", field="rewards")
    return _matrix_field({"rewards": matrix}, "rewards", (r, r))
