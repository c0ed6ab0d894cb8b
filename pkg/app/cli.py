import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

from app.core.config import SolverOptions, settings
from app.core.errors import CranError, InfeasibleError, NotConvergedError
from app.core.logging import initialize_logging, log_debug, log_error, run_context
from app.core.sink import dumps, result_sink
from app.models.admission import InitScheme, UserSelection
from app.models.baselines import BaselineMethod
from app.models.experiments import ExperimentMethod, ExperimentSpec, SweepAxis
from app.services.harness import load_config_document, spec_from_document
from app.services.network_model import instance_to_snapshot
from app.services.simulation_manager import SimulationManager

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NOT_CONVERGED = 3

# flag -> NetworkConfig field
NETWORK_FLAGS = {
    "seed": "rng_seed",
    "rrhs": "num_rrhs",
    "users": "num_users",
    "tx_antennas": "tx_antennas",
    "rx_antennas": "rx_antennas",
    "streams": "streams",
    "candidates": "candidate_size",
    "rate_min": "rate_min",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="JSON document with network, power and experiment sections")
    parser.add_argument("-s", "--seed", type=int, help="channel realization seed")
    parser.add_argument("-I", "--rrhs", type=int, help="number of RRHs")
    parser.add_argument("-K", "--users", type=int, help="number of users")
    parser.add_argument("-M", "--tx-antennas", type=int, help="antennas per RRH")
    parser.add_argument("-N", "--rx-antennas", type=int, help="antennas per user")
    parser.add_argument("-d", "--streams", type=int, help="data streams per user")
    parser.add_argument("-X", "--candidates", type=int, help="candidate RRHs per user")
    parser.add_argument("-r", "--rate-min", type=float, help="rate target in nats/s/Hz")
    parser.add_argument("-o", "--output-dir", help="directory for result files")
    parser.add_argument("-w", "--workers", type=int, help="worker processes")
    parser.add_argument("-v", "--verbose", action="store_true", help="dump dual-solver iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="green-cran",
        description="Two-stage network power minimization for user-centric C-RAN",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--log-level", default=settings.log_level(), help="logging level")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="draw one channel realization")
    _add_common(generate)

    stage1 = commands.add_parser("stage1", help="user admission")
    _add_common(stage1)
    stage1.add_argument("--method", choices=[m.value for m in UserSelection], default=UserSelection.USC.value)
    stage1.add_argument("--scheme", choices=[s.value for s in InitScheme], default=InitScheme.SVD.value)

    solve = commands.add_parser("solve", help="user admission then RRH selection")
    _add_common(solve)
    solve.add_argument("--method", choices=[m.value for m in UserSelection], default=UserSelection.USC.value)
    solve.add_argument("--scheme", choices=[s.value for s in InitScheme], default=InitScheme.SVD.value)

    baseline = commands.add_parser("baseline", help="one RRH-selection comparison method")
    _add_common(baseline)
    baseline.add_argument("--method", choices=[m.value for m in BaselineMethod], required=True)
    baseline.add_argument("--admitted", action="store_true", help="serve only the users Stage I admits")

    sweep = commands.add_parser("sweep", help="Monte Carlo sweep over one parameter")
    _add_common(sweep)
    sweep.add_argument("--axis", choices=[a.value for a in SweepAxis], help="swept parameter")
    sweep.add_argument("--values", help="comma separated sweep values")
    sweep.add_argument("--trials", type=int, help="channel realizations per value")
    sweep.add_argument("--methods", help="comma separated methods: " + ", ".join(m.value for m in ExperimentMethod))
    sweep.add_argument("--baseline-comparison", action="store_true", help="keep only fully feasible trials")
    sweep.add_argument("--timing", action="store_true", help="also write per-row wall-clock times")
    sweep.add_argument(
        "--fixed-users", action="store_true", help="admit users once on the single-stream or single-antenna network"
    )
    sweep.add_argument("--compare-solvers", action="store_true", help="time one subproblem with SOCP and dual BCD")

    verify = commands.add_parser("verify", help="property checks on one seed")
    _add_common(verify)

    serve = commands.add_parser("serve", help="start the HTTP API")
    serve.add_argument("--host", default=settings.app_host())
    serve.add_argument("--port", type=int, default=settings.app_port())
    return parser


def load_spec(args: argparse.Namespace) -> ExperimentSpec:
    """Configuration document (or defaults) with command line overrides applied"""
    spec = load_config_document(args.config) if args.config else ExperimentSpec()
    network = spec.network.model_dump()
    for flag, name in NETWORK_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            network[name] = value
    experiment: Dict[str, Any] = spec.model_dump(exclude={"network", "power"})
    if args.seed is not None:
        experiment["seed"] = args.seed
    if args.output_dir:
        experiment["output_dir"] = args.output_dir
    if args.workers:
        experiment["workers"] = args.workers
    if getattr(args, "axis", None):
        experiment["sweep_axis"] = args.axis
    if getattr(args, "values", None):
        experiment["sweep_values"] = [float(v) for v in args.values.split(",")]
    if getattr(args, "trials", None):
        experiment["trials"] = args.trials
    if getattr(args, "methods", None):
        experiment["methods"] = args.methods.split(",")
    if getattr(args, "baseline_comparison", False):
        experiment["baseline_comparison"] = True
    if getattr(args, "timing", False):
        experiment["record_timing"] = True
    if getattr(args, "fixed_users", False):
        experiment["fixed_user_set"] = True
    if getattr(args, "compare_solvers", False):
        experiment["compare_solvers"] = True
    return spec_from_document({"network": network, "power": spec.power.model_dump(), "experiment": experiment})


def _emit(name: str, record: Dict[str, Any]) -> None:
    result_sink.write_jsonl(name, [record])
    sys.stdout.write(dumps(record) + "\n")


def cmd_generate(manager: SimulationManager, spec: ExperimentSpec, args: argparse.Namespace) -> int:
    instance = manager.generate(spec.network, spec.power)
    path = result_sink.write_json("instance.json", instance_to_snapshot(instance))
    _emit(
        "generate.jsonl",
        {
            "instance": str(path),
            "candidate_rrhs": [list(rrhs) for rrhs in instance.candidate_rrhs],
            "noise_powers": instance.noise_powers.tolist(),
        },
    )
    return EXIT_OK


def cmd_stage1(manager: SimulationManager, spec: ExperimentSpec, args: argparse.Namespace) -> int:
    instance = manager.generate(spec.network, spec.power)
    result = manager.admit(instance, UserSelection(args.method), InitScheme(args.scheme))
    _emit("stage1.jsonl", result.to_dict())
    return EXIT_OK


def cmd_solve(manager: SimulationManager, spec: ExperimentSpec, args: argparse.Namespace) -> int:
    instance = manager.generate(spec.network, spec.power)
    report = manager.solve(instance, UserSelection(args.method), InitScheme(args.scheme))
    _emit("solve.jsonl", report.to_dict())
    return EXIT_INFEASIBLE if report.violations else EXIT_OK


def cmd_baseline(manager: SimulationManager, spec: ExperimentSpec, args: argparse.Namespace) -> int:
    instance = manager.generate(spec.network, spec.power)
    users: Optional[List[int]] = None
    if args.admitted:
        users = list(manager.admit(instance, spec.stage1_method, spec.init_scheme).admitted_users)
    report = manager.baseline(instance, BaselineMethod(args.method), users)
    _emit("baseline.jsonl", report.to_dict())
    return EXIT_OK


def cmd_sweep(manager: SimulationManager, spec: ExperimentSpec, args: argparse.Namespace) -> int:
    result = manager.run_sweep(spec)
    for row in result.summary:
        sys.stdout.write(dumps(row) + "\n")
    return EXIT_OK


def cmd_verify(manager: SimulationManager, spec: ExperimentSpec, args: argparse.Namespace) -> int:
    report = manager.verify(spec.network, spec.power)
    _emit("verify.jsonl", report.to_dict())
    return EXIT_OK if report.passed else EXIT_NOT_CONVERGED


COMMANDS: Dict[str, Callable[[SimulationManager, ExperimentSpec, argparse.Namespace], int]] = {
    "generate": cmd_generate,
    "stage1": cmd_stage1,
    "solve": cmd_solve,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def exit_code(error: Exception) -> int:
    if isinstance(error, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(error, NotConvergedError):
        return EXIT_NOT_CONVERGED
    return EXIT_CONFIG


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    initialize_logging(args.log_level.upper())
    if args.command == "serve":
        from app.main import serve

        serve(args.host, args.port)
        return EXIT_OK

    try:
        spec = load_spec(args)
        result_sink.initialize(spec.output_dir)
        options = SolverOptions.from_settings().updated(workers=spec.workers, verbose=args.verbose)
        manager = SimulationManager(result_sink, options)
        log_debug(logger, f"Running {args.command}")
        with run_context(seed=spec.network.rng_seed):
            return COMMANDS[args.command](manager, spec, args)
    except (CranError, ValueError) as e:
        log_error(logger, f"{args.command} failed: {e}")
        return exit_code(e)
    finally:
        result_sink.close()


if __name__ == "__main__":
    sys.exit(main())
