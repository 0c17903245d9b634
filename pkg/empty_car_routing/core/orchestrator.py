"""
Experiment orchestrator

Coordinates scenarios, solvers and the simulator into the experiment
workflows exposed on the command line. Each workflow returns named pandas
tables; writing them (with a manifest) is left to the caller.
"""

import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..simulation.policies import (RoutingPolicy, policy_jlcr, policy_lookahead, policy_static, policy_sw)
from ..simulation.simulator import simulate
from ..solvers.equilibrium import equilibrium_point, residuals
from ..solvers.fleet_sizing import backhaul_routing, min_fleet, repair_diagonal
from ..solvers.fluid_ode import from_equilibrium, idle_state, integrate, random_fluid_state
from ..solvers.fluid_opt import lookahead_table, solve_fluid_optimum, standard_fluid_table, utility
from ..solvers.mva import availability_curve
from ..utils.models import NetworkParams, RoutingMatrix, Schedule, SimConfig
from ..utils import reports
from ..utils.scenarios import load_routing, perturb
from .config import get_settings
from .exceptions import ReducibleChainError, ScenarioError

logger = logging.getLogger(__name__)

Scenario = Union[NetworkParams, Schedule]
Tables = Dict[str, pd.DataFrame]


class ExperimentOrchestrator:
    """Runs the optimization, analysis and simulation workflows"""

    def __init__(self):
        self.settings = get_settings()
        self._optimum_cache: Dict[int, Tuple[NetworkParams, RoutingMatrix]] = {}

    # -- shared helpers ----------------------------------------------------

    @staticmethod
    def static_params(scenario: Scenario, slot: int = 1) -> NetworkParams:
        """Parameters of a static scenario, or of one 1-based slot of a schedule"""
        if isinstance(scenario, NetworkParams):
            return scenario
        if not 1 <= slot <= len(scenario.slots):
            raise ScenarioError(f"slot {slot} out of range 1..{len(scenario.slots)}", field="slot")
        return scenario.slots[slot - 1].params

    def optimal_routing(self, params: NetworkParams) -> RoutingMatrix:
        cached = self._optimum_cache.get(id(params))
        if cached is None or cached[0] is not params:
            cached = (params, solve_fluid_optimum(params).q_star)
            self._optimum_cache[id(params)] = cached
        return cached[1]

    def resolve_routing(self, ref: Optional[str], params: NetworkParams,
                        file_routing: Optional[RoutingMatrix] = None) -> RoutingMatrix:
        """
        Turn a --q argument into a routing matrix

        Args:
            ref: optimal, identity, backhaul, a JSON path, or None
            params: Parameters the routing applies to
            file_routing: Routing stored in the scenario file, used when ref is None

        Returns:
            Row-stochastic RoutingMatrix
        """
        if ref is None:
            return file_routing if file_routing is not None else self.optimal_routing(params)
        if ref == "optimal":
            return self.optimal_routing(params)
        if ref == "identity":
            return RoutingMatrix.identity(params.r)
        if ref == "backhaul":
            return backhaul_routing(params)
        return load_routing(ref, params.r)

    def build_policy(self, spec: str, scenario: Scenario, routing: Optional[RoutingMatrix] = None) -> RoutingPolicy:
        """
        Parse a policy spec: static, jlcr[:eta], sw or lookahead:T,delta (hours)
        """
        name, _, arg = spec.partition(":")
        if name == "static":
            if isinstance(scenario, Schedule):
                return policy_lookahead(standard_fluid_table(scenario), name="static")
            return policy_static(routing if routing is not None else self.optimal_routing(scenario))
        if name == "jlcr":
            try:
                return policy_jlcr(float(arg) if arg else 0.5)
            except ValueError as e:
                raise ScenarioError(f"bad JLCR threshold in '{spec}': {e}", field="policy")
        if name == "sw":
            return policy_sw()
        if name == "lookahead":
            try:
                horizon_h, delta_h = (float(v) for v in arg.split(","))
            except ValueError:
                raise ScenarioError(f"lookahead policy needs 'lookahead:T,delta', got '{spec}'", field="policy")
            if not isinstance(scenario, Schedule):
                # Averaging a constant schedule reproduces the static optimum
                policy = policy_static(routing if routing is not None else self.optimal_routing(scenario))
                policy.name = spec
                return policy
            units = scenario.units_per_hour
            table = lookahead_table(scenario, delta_h * units, horizon_h * units)
            return policy_lookahead(table, name=spec)
        raise ScenarioError(f"unknown policy '{spec}'", field="policy")

    # -- workflows ---------------------------------------------------------

    def optimize(self, scenario: Scenario, rewards: Optional[np.ndarray] = None) -> Tables:
        """Solve the fluid LP for a static scenario or for every slot of a schedule"""
        start_time = time.time()
        tables: Tables = {}
        summary = []
        slots = [(None, scenario)] if isinstance(scenario, NetworkParams) else [
            (k + 1, slot.params) for k, slot in enumerate(scenario.slots)
        ]

        for slot_number, params in slots:
            sol = solve_fluid_optimum(params, rewards)
            prefix = "" if slot_number is None else f"slot{slot_number}_"
            tables.update(reports.solution_frames(sol, prefix=prefix))
            summary.append({
                "slot": slot_number or 1,
                "value": sol.value,
                "min_availability": float(sol.a_bar.min()),
                "saturated_regions": int(np.sum(sol.a_bar >= 1.0 - self.settings.saturation_tol)),
                "idle_mass": float(np.trace(sol.e_bar)),
            })

        tables["summary"] = pd.DataFrame(summary)
        logger.info(f"Optimization completed in {time.time() - start_time:.2f}s:")
        for row in summary:
            logger.info(f"  - slot {row['slot']}: value {row['value']:.6f}")
        return tables

    def mva(self, params: NetworkParams, routing: RoutingMatrix, n_list: Optional[Sequence[int]] = None) -> Tables:
        n_list = list(n_list) if n_list else [params.n_cars]
        logger.info(f"Running MVA for N in {n_list}")
        tables = {"availability": reports.curve_frame(availability_curve(params, routing, n_list))}
        try:
            point = equilibrium_point(params, routing)
            tables["equilibrium"] = pd.DataFrame({
                "region": np.arange(1, params.r + 1),
                "a_bar": point.a_bar,
            })
        except ReducibleChainError as e:
            logger.warning(f"Skipping fluid reference: {e}")
        return tables

    def simulate(self, scenario: Scenario, policy_spec: str, config: SimConfig,
                 routing: Optional[RoutingMatrix] = None) -> Tables:
        policy = self.build_policy(policy_spec, scenario, routing)
        metrics = simulate(scenario, policy, config)
        return {"metrics": reports.metrics_frame(metrics), "bins": reports.bins_frame(metrics)}

    def compare(self, params: NetworkParams, n_list: Sequence[int], policy_specs: Sequence[str],
                config: SimConfig) -> Tables:
        """Utility of each policy at each fleet size, next to the fluid upper bound"""
        start_time = time.time()
        optimum = solve_fluid_optimum(params)
        rows = []
        for n_cars in n_list:
            scaled = params.with_fleet(n_cars)
            rows.append({"N": n_cars, "policy": "fluid_optimum", "utility": optimum.value,
                         "utility_std": 0.0, "ci_half_width": 0.0})
            for spec in policy_specs:
                policy = self.build_policy(spec, scaled, optimum.q_star)
                metrics = simulate(scaled, policy, config)
                rows.append({"N": n_cars, "policy": spec, "utility": metrics.utility,
                             "utility_std": metrics.utility_std, "ci_half_width": metrics.ci_half_width})
                logger.info(f"  - N={n_cars} {spec}: {metrics.utility:.4f}")
        logger.info(f"Comparison completed in {time.time() - start_time:.2f}s")
        return {"compare": pd.DataFrame(rows)}

    def lookahead_eval(self, schedule: Schedule, horizons_h: Sequence[float], delta_h: float,
                       config: SimConfig) -> Tables:
        """Per-hour utility of the standard fluid policy and of T-lookahead policies"""
        start_time = time.time()
        if config.n_cars is not None:
            schedule = schedule.with_fleet(config.n_cars)
        units = schedule.units_per_hour
        config = config.model_copy(update={"warmup": config.warmup or 0.0, "bin_width": units, "n_cars": None})

        policies: List[Tuple[str, RoutingPolicy]] = [
            ("standard_fluid", policy_lookahead(standard_fluid_table(schedule), name="standard_fluid"))
        ]
        for horizon_h in horizons_h:
            table = lookahead_table(schedule, delta_h * units, horizon_h * units)
            policies.append((f"lookahead_T{horizon_h:g}", policy_lookahead(table, name=f"T={horizon_h:g}")))

        rows = []
        for label, policy in policies:
            metrics = simulate(schedule, policy, config)
            row = {"policy": label}
            for b in metrics.bins:
                row[f"{b.start / units:g}-{b.end / units:g}h"] = b.utility
            row.update({"total": metrics.utility, "total_std": metrics.utility_std,
                        "ci_half_width": metrics.ci_half_width})
            rows.append(row)
            logger.info(f"  - {label}: total {metrics.utility:.4f}")
        logger.info(f"Lookahead evaluation completed in {time.time() - start_time:.2f}s")
        return {"lookahead": pd.DataFrame(rows)}

    def robustness(self, params: NetworkParams, sigmas: Sequence[float], reps: int, seed: int = 0) -> Tables:
        """
        Performance of routing optimized on noisy parameters, evaluated on the true ones

        Args:
            params: True market primitives
            sigmas: Noise levels in [0, 1)
            reps: Perturbation draws per noise level
            seed: Base seed; draw k uses seed + k

        Returns:
            Table with mean and std of the true fluid utility per sigma
        """
        start_time = time.time()
        optimum = solve_fluid_optimum(params).value
        rows = []
        for sigma in sigmas:
            values = []
            skipped = 0
            for rep in range(reps):
                noisy = perturb(params, sigma, seed + rep)
                routing = solve_fluid_optimum(noisy).q_star
                try:
                    point = equilibrium_point(params, routing)
                except ReducibleChainError as e:
                    logger.warning(f"sigma={sigma} rep {rep}: {e}; skipped")
                    skipped += 1
                    continue
                values.append(utility(point.a_bar, params))
            mean = float(np.mean(values)) if values else float("nan")
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            rows.append({"sigma": sigma, "mean": mean, "std": std, "optimum": optimum,
                         "relative_gap": 1.0 - mean / optimum, "reps": len(values), "skipped": skipped})
            logger.info(f"  - sigma={sigma}: mean {mean:.6f}, std {std:.6f} over {len(values)} reps")
        logger.info(f"Robustness study completed in {time.time() - start_time:.2f}s")
        return {"robustness": pd.DataFrame(rows)}

    def fleet_size(self, params: NetworkParams) -> Tables:
        result = min_fleet(params)
        repaired = repair_diagonal(result, params)
        rescaled = min_fleet(params.scaled_demand(1.0 / result.kappa)).kappa
        summary = reports.fleet_frame(repaired, params)
        summary["rescaled_kappa"] = rescaled
        logger.info(f"Fleet sizing: kappa {result.kappa:.6f}, rescaled {rescaled:.6f}, verdict {repaired.verdict}")
        return {"fleet": summary, "q_kappa": reports.routing_frame(repaired.q_kappa)}

    def fluid(self, params: NetworkParams, routing: RoutingMatrix, t_end: float,
              dt: Optional[float] = None, init: str = "idle:1") -> Tables:
        point = None
        try:
            point = equilibrium_point(params, routing)
            logger.info(f"Equilibrium residual {residuals(point, params, routing):.3e}")
        except ReducibleChainError as e:
            logger.warning(f"No equilibrium for this routing: {e}")

        kind, _, arg = init.partition(":")
        if kind == "equilibrium":
            if point is None:
                raise ScenarioError("init=equilibrium needs an irreducible routing chain", field="init")
            state0 = from_equilibrium(point)
        elif kind == "idle":
            region = int(arg or 1) - 1
            if not 0 <= region < params.r:
                raise ScenarioError(f"idle region {region + 1} out of range", field="init")
            state0 = idle_state(params.r, region)
        elif kind == "random":
            state0 = random_fluid_state(params.r, int(arg or self.settings.default_seed))
        else:
            raise ScenarioError(f"unknown init '{init}', use equilibrium, idle:<region> or random:<seed>", field="init")

        trajectory = integrate(state0, params, routing, t_end, dt=dt, point=point)
        if trajectory.distance is not None:
            logger.info(f"Final distance to equilibrium {trajectory.distance[-1]:.3e}, "
                        f"max V increase {trajectory.max_lyapunov_increase:.3e}")
        return {"trajectory": reports.trajectory_frame(trajectory)}
