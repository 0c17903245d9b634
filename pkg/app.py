"""
Command-line front end for empty-car routing experiments.

    python app.py optimize builtin:nine_region_didi --out results/didi
    python app.py mva builtin:two_region --q routing.json --n-list 10,100,1200
    python app.py simulate builtin:two_region --policy jlcr:0.5 --horizon 500 --reps 5
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from empty_car_routing import __version__
from empty_car_routing.core.config import get_settings
from empty_car_routing.core.exceptions import EmptyCarRoutingError, ScenarioError
from empty_car_routing.core.orchestrator import ExperimentOrchestrator
from empty_car_routing.utils.models import NetworkParams, RunManifest, Schedule, SimConfig
from empty_car_routing.utils.reports import ReportWriter
from empty_car_routing.utils.scenarios import load_rewards, resolve_scenario

logger = logging.getLogger("empty_car_routing.app")

DEFAULT_POLICIES = ["static", "jlcr:0", "jlcr:0.25", "jlcr:0.5", "jlcr:0.75", "jlcr:1", "sw"]


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Empty-car routing in closed ridesharing networks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="Scenario file path or builtin:<name>")
    common.add_argument("--out", help="Output directory (default: <output_dir>/<command>)")
    common.add_argument("--log-level", help="Logging level, overrides ECR_LOG_LEVEL")
    common.add_argument("--slot", type=int, default=1, help="1-based slot used when a static command gets a schedule")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--horizon", type=float, help="Simulated time span")
    sim.add_argument("--warmup", type=float, help="Discarded prefix of each replication")
    sim.add_argument("--seed", type=int, help="Base seed; replication k uses seed + k")
    sim.add_argument("--workers", type=int, help="Process-pool size for replications")
    sim.add_argument("--travel-time", choices=["exponential", "deterministic"], help="Travel-time distribution")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="Solve the fluid LP and recover q*")
    p.add_argument("--rewards", help="JSON file with an r x r reward matrix")

    p = sub.add_parser("mva", parents=[common], help="Exact availability by mean value analysis")
    p.add_argument("--q", help="optimal, identity, backhaul or a JSON routing file")
    p.add_argument("--n-list", type=_int_list, help="Fleet sizes, comma separated")

    p = sub.add_parser("simulate", parents=[common, sim], help="Simulate one routing policy")
    p.add_argument("--policy", default="static", help="static | jlcr:<eta> | sw | lookahead:<T>,<delta>")
    p.add_argument("--q", help="Routing for the static policy")
    p.add_argument("--n", type=int, help="Fleet size override")
    p.add_argument("--reps", type=int, default=1, help="Replications")
    p.add_argument("--bin-width", type=float, help="Width of time bins in the breakdown")

    p = sub.add_parser("compare", parents=[common, sim], help="Compare policies across fleet sizes")
    p.add_argument("--n-list", type=_int_list, required=True, help="Fleet sizes, comma separated")
    p.add_argument("--policies", nargs="+", default=DEFAULT_POLICIES, help="Policy specs")
    p.add_argument("--seeds", type=int, default=5, help="Replications per (N, policy)")

    p = sub.add_parser("lookahead-eval", parents=[common, sim], help="Per-hour utility of lookahead policies")
    p.add_argument("--T-list", dest="t_list", type=_float_list, default=[0.5], help="Lookahead horizons in hours")
    p.add_argument("--delta", type=float, default=1.0 / 60.0, help="Re-solve interval in hours (one minute)")
    p.add_argument("--n", type=int, help="Fleet size override")
    p.add_argument("--seeds", type=int, default=10, help="Replications per policy")

    p = sub.add_parser("robustness", parents=[common], help="Routing optimized on noisy parameters")
    p.add_argument("--sigma-list", type=_float_list, default=[0.0, 0.05, 0.1], help="Noise levels in [0, 1)")
    p.add_argument("--reps", type=int, default=300, help="Perturbation draws per noise level")
    p.add_argument("--seed", type=int, help="Base seed")

    sub.add_parser("fleet-size", parents=[common], help="Minimum fluid mass for perfect availability")

    p = sub.add_parser("fluid", parents=[common], help="Integrate the fluid ODE")
    p.add_argument("--q", help="optimal, identity, backhaul or a JSON routing file")
    p.add_argument("--t-end", type=float, default=100.0, help="Integration end time")
    p.add_argument("--dt", type=float, help="Euler step")
    p.add_argument("--init", default="idle:1", help="equilibrium | idle:<region> | random:<seed>")

    return parser


def _sim_config(args, replications: int, n_cars: Optional[int] = None) -> SimConfig:
    settings = get_settings()
    return SimConfig(
        horizon=args.horizon,
        warmup=args.warmup,
        seed=args.seed if args.seed is not None else settings.default_seed,
        replications=replications,
        travel_time_mode=args.travel_time,
        n_cars=n_cars,
        bin_width=getattr(args, "bin_width", None),
        max_workers=args.workers,
    )


def _seeds(base: int, count: int) -> List[int]:
    return list(range(base, base + count))


def run_command(args) -> Path:
    """Run one subcommand and write its tables; returns the output directory"""
    settings = get_settings()
    orchestrator = ExperimentOrchestrator()
    scenario, file_routing = resolve_scenario(args.scenario)
    seed = getattr(args, "seed", None)
    seed = seed if seed is not None else settings.default_seed
    seeds: List[int] = []

    if args.command == "optimize":
        rewards = None
        if args.rewards:
            rewards = load_rewards(args.rewards, orchestrator.static_params(scenario).r)
        tables = orchestrator.optimize(scenario, rewards)

    elif args.command == "mva":
        params = orchestrator.static_params(scenario, args.slot)
        routing = orchestrator.resolve_routing(args.q, params, file_routing)
        tables = orchestrator.mva(params, routing, args.n_list)

    elif args.command == "simulate":
        routing = None
        if isinstance(scenario, NetworkParams):
            routing = orchestrator.resolve_routing(args.q, scenario, file_routing)
        config = _sim_config(args, args.reps, args.n)
        seeds = _seeds(config.seed, config.replications)
        tables = orchestrator.simulate(scenario, args.policy, config, routing)

    elif args.command == "compare":
        params = orchestrator.static_params(scenario, args.slot)
        config = _sim_config(args, args.seeds)
        seeds = _seeds(config.seed, config.replications)
        tables = orchestrator.compare(params, args.n_list, args.policies, config)

    elif args.command == "lookahead-eval":
        if not isinstance(scenario, Schedule):
            raise ScenarioError("lookahead-eval needs a time-varying schedule", field="schedule")
        config = _sim_config(args, args.seeds, args.n)
        seeds = _seeds(config.seed, config.replications)
        tables = orchestrator.lookahead_eval(scenario, args.t_list, args.delta, config)

    elif args.command == "robustness":
        params = orchestrator.static_params(scenario, args.slot)
        seeds = _seeds(seed, args.reps)
        tables = orchestrator.robustness(params, args.sigma_list, args.reps, seed)

    elif args.command == "fleet-size":
        tables = orchestrator.fleet_size(orchestrator.static_params(scenario, args.slot))

    elif args.command == "fluid":
        params = orchestrator.static_params(scenario, args.slot)
        routing = orchestrator.resolve_routing(args.q, params, file_routing)
        tables = orchestrator.fluid(params, routing, args.t_end, args.dt, args.init)

    else:
        raise ScenarioError(f"unknown command '{args.command}'")

    out_dir = Path(args.out) if args.out else Path(settings.output_dir) / args.command
    parameters = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "scenario", "out", "log_level")}
    manifest = RunManifest(
        command=args.command,
        scenario=args.scenario,
        seeds=seeds,
        parameters=parameters,
        tool_version=__version__,
    )
    writer = ReportWriter(out_dir, manifest)
    for name, frame in tables.items():
        writer.add(name, frame)
    writer.write()
    return out_dir


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    settings = get_settings()
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        out_dir = run_command(args)
    except EmptyCarRoutingError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"{args.command} failed: {e}")
        return ScenarioError.exit_code

    logger.info(f"{args.command} finished; reports in {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
