import json
import logging
import time
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import ValidationError
from scipy import stats

from app.core.config import SolverOptions
from app.core.errors import (
    ConfigurationError,
    ContractViolationError,
    GuardViolationError,
    InfeasibleError,
    NotConvergedError,
)
from app.core.logging import log_debug, log_info, log_warning, run_context
from app.core.sink import ResultSink, result_sink
from app.core.workers import ordered_map
from app.models.baselines import BaselineMethod
from app.models.experiments import (
    METRICS,
    SUMMARY_COLUMNS,
    ExperimentMethod,
    ExperimentSpec,
    SweepResult,
    TrialRecord,
    TrialStatus,
)
from app.models.network import NetworkInstance
from app.models.precoding import PrecoderSet
from app.models.sparse import SolverTiming
from app.services.baselines import run_baseline
from app.services.network_model import generate_instance
from app.services.stage1_admission import check_feasibility, select_users
from app.services.stage2_sparse import rln_solve, time_wpm_solvers

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = ("network", "power", "experiment")

TrialTask = Tuple[ExperimentSpec, float, int, SolverOptions]

# a trial that raises one of these becomes a failed row; the sweep goes on
TRIAL_FAILURES = (
    GuardViolationError,
    InfeasibleError,
    NotConvergedError,
    ContractViolationError,
    ArithmeticError,
    np.linalg.LinAlgError,
)


def load_config_document(path: str) -> ExperimentSpec:
    """Read a JSON document with network, power and experiment sections"""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read configuration {path}: {e}") from e
    return spec_from_document(document)


def spec_from_document(document: object) -> ExperimentSpec:
    if not isinstance(document, dict):
        raise ConfigurationError("configuration document must be a JSON object")
    unknown = sorted(set(document) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown configuration sections: {unknown}")
    try:
        return ExperimentSpec.model_validate(
            {
                **document.get("experiment", {}),
                "network": document.get("network", {}),
                "power": document.get("power", {}),
            }
        )
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


def trial_seed(base_seed: int, trial: int) -> int:
    return base_seed ^ trial


def trial_instance(spec: ExperimentSpec, value: float, trial: int) -> NetworkInstance:
    config = spec.config_for(value, trial_seed(spec.seed, trial))
    return generate_instance(config, spec.power)


def _status(error: Exception) -> TrialStatus:
    if isinstance(error, GuardViolationError):
        return TrialStatus.GUARD
    if isinstance(error, InfeasibleError):
        return TrialStatus.INFEASIBLE
    return TrialStatus.NOT_CONVERGED


def _run_method(
    method: ExperimentMethod,
    instance: NetworkInstance,
    users: Tuple[int, ...],
    v0: PrecoderSet,
    options: SolverOptions,
) -> Dict[str, object]:
    if method == ExperimentMethod.RLN:
        result = rln_solve(instance, users, v0, options=options)
        return {
            "active_rrhs": result.npc.active_set,
            "npc": result.npc,
            "rates": dict(result.rates),
            "iterations": {"rln": result.state.iteration, "wmmse": sum(result.wmmse_iterations)},
            "feasibility_checks": result.feasibility_checks,
        }
    report = run_baseline(instance, users, BaselineMethod(method.value), options)
    return {
        "active_rrhs": report.active_set,
        "npc": report.npc,
        "rates": dict(report.rates),
        "iterations": {},
        "feasibility_checks": report.feasibility_checks,
    }


def _admit(
    spec: ExperimentSpec, instance: NetworkInstance, seed: int, options: SolverOptions
) -> Tuple[Tuple[int, ...], PrecoderSet, int]:
    """Admitted users, feasible starting precoders and the Stage-I evaluation count"""
    if spec.fixed_user_set:
        reference = generate_instance(spec.reference_config(seed), spec.power)
        users = select_users(reference, spec.stage1_method, spec.init_scheme, options).admitted_users
        feasibility = check_feasibility(instance, users, instance.cluster_rrhs(users), options)
        if not feasibility:
            raise InfeasibleError(f"fixed user set {users} cannot be served")
        return users, feasibility.witness, 1
    admission = select_users(instance, spec.stage1_method, spec.init_scheme, options)
    return admission.admitted_users, admission.precoders, admission.evaluations


def run_trial(
    spec: ExperimentSpec, value: float, trial: int, options: Optional[SolverOptions] = None
) -> List[TrialRecord]:
    """Stage I followed by every requested method on one channel realization"""
    options = options or SolverOptions.from_settings()
    with run_context(seed=trial_seed(spec.seed, trial), trial=trial):
        return _trial_rows(spec, value, trial, options)


def _trial_rows(spec: ExperimentSpec, value: float, trial: int, options: SolverOptions) -> List[TrialRecord]:
    seed = trial_seed(spec.seed, trial)
    instance = trial_instance(spec, value, trial)
    common = {
        "trial": trial,
        "seed": seed,
        "sweep_axis": spec.sweep_axis.value,
        "sweep_value": float(value),
    }

    def rows(status: TrialStatus, message: str, admitted: Tuple[int, ...] = ()) -> List[TrialRecord]:
        return [
            TrialRecord(method=method.value, status=status, message=message, admitted_users=admitted, **common)
            for method in spec.methods
        ]

    stage1_started = time.perf_counter()
    try:
        if spec.baseline_comparison:
            users = tuple(range(instance.num_users))
            feasibility = check_feasibility(instance, users, instance.cluster_rrhs(users), options)
            if not feasibility:
                log_debug(logger, f"Trial {trial} skipped: not every user can be served")
                return rows(TrialStatus.SKIPPED, "full cooperation infeasible for all users")
            v0, stage1_iterations = feasibility.witness, 1
        else:
            users, v0, stage1_iterations = _admit(spec, instance, seed, options)
    except TRIAL_FAILURES as e:
        log_warning(logger, f"Trial {trial} Stage I failed: {e!r}")
        return rows(_status(e), str(e) or type(e).__name__)
    stage1_time = time.perf_counter() - stage1_started

    timing: Optional[SolverTiming] = None
    if spec.compare_solvers and users:
        try:
            timing = time_wpm_solvers(instance, users, v0, options)
        except TRIAL_FAILURES as e:
            log_warning(logger, f"Trial {trial} solver timing failed: {e!r}")

    records: List[TrialRecord] = []
    for method in spec.methods:
        started = time.perf_counter()
        try:
            outcome = _run_method(method, instance, users, v0, options)
        except TRIAL_FAILURES as e:
            log_warning(logger, f"Trial {trial} method {method.value}: {e!r}")
            records.append(
                TrialRecord(
                    method=method.value,
                    status=_status(e),
                    admitted_users=users,
                    message=str(e) or type(e).__name__,
                    **common,
                )
            )
            continue
        iterations = {"stage1": stage1_iterations, **outcome.pop("iterations")}  # type: ignore[dict-item]
        records.append(
            TrialRecord(
                method=method.value,
                status=TrialStatus.OK,
                admitted_users=users,
                iterations=iterations,
                wall_clock=stage1_time + time.perf_counter() - started,
                solver_timing=timing,
                **outcome,  # type: ignore[arg-type]
                **common,
            )
        )
    return records


def _run_task(task: TrialTask) -> List[TrialRecord]:
    spec, value, trial, options = task
    return run_trial(spec, value, trial, options)


def _metric(record: TrialRecord, metric: str) -> float:
    if metric == "admitted_count":
        return float(len(record.admitted_users))
    if metric == "active_rrh_count":
        return float(len(record.active_rrhs))
    if metric == "feasibility_checks":
        return float(record.feasibility_checks)
    return float(getattr(record.npc, metric))


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(stats.sem(values, ddof=1))


def aggregate(records: Sequence[TrialRecord]) -> List[Dict[str, object]]:
    """Mean and standard error of each metric per (sweep value, method) over successful trials"""
    groups: Dict[Tuple[float, str], List[TrialRecord]] = defaultdict(list)
    axis: Dict[Tuple[float, str], str] = {}
    for record in records:
        groups[(record.sweep_value, record.method)].append(record)
        axis[(record.sweep_value, record.method)] = record.sweep_axis

    summary: List[Dict[str, object]] = []
    for key in sorted(groups):
        members = groups[key]
        ok = [record for record in members if record.ok]
        row: Dict[str, object] = {
            "sweep_axis": axis[key],
            "sweep_value": key[0],
            "method": key[1],
            "trials": len(members),
            "ok_trials": len(ok),
        }
        for metric in METRICS:
            values = np.array([_metric(record, metric) for record in ok])
            row[f"{metric}_mean"] = float(values.mean()) if values.size else float("nan")
            row[f"{metric}_stderr"] = _stderr(values)
        summary.append({column: row[column] for column in SUMMARY_COLUMNS})
    return summary


def _solver_timings(records: Sequence[TrialRecord]) -> List[Dict[str, object]]:
    """One row per timed (sweep value, trial); every method of a trial shares the same timing"""
    seen: Set[Tuple[float, int]] = set()
    rows: List[Dict[str, object]] = []
    for record in records:
        key = (record.sweep_value, record.trial)
        if record.solver_timing is None or key in seen:
            continue
        seen.add(key)
        rows.append({"trial": record.trial, "sweep_value": record.sweep_value, **record.solver_timing.to_dict()})
    return rows


def sweep(
    spec: ExperimentSpec,
    options: Optional[SolverOptions] = None,
    sink: Optional[ResultSink] = None,
) -> SweepResult:
    """Run every (sweep value, trial) pair and write trials.jsonl and summary.csv"""
    options = options or SolverOptions.from_settings()
    sink = sink or result_sink
    # one pool at the trial level only
    trial_options = options.updated(workers=1) if spec.workers > 1 else options
    tasks: List[TrialTask] = [
        (spec, value, trial, trial_options) for value in spec.sweep_values for trial in range(spec.trials)
    ]
    log_info(
        logger,
        f"Sweeping {spec.sweep_axis.value} over {spec.sweep_values} with {spec.trials} trials each",
        tasks=len(tasks),
    )
    records = tuple(record for rows in ordered_map(_run_task, tasks, spec.workers) for record in rows)
    summary = aggregate(records)

    files = [
        sink.write_jsonl("trials.jsonl", (record.to_dict() for record in records)),
        sink.write_csv("summary.csv", summary),
    ]
    if spec.record_timing:
        files.append(
            sink.write_jsonl(
                "timings.jsonl",
                (
                    {key: record.to_dict(True)[key] for key in ("trial", "sweep_value", "method", "wall_clock")}
                    for record in records
                ),
            )
        )
    if spec.compare_solvers:
        files.append(sink.write_jsonl("solver_timings.jsonl", _solver_timings(records)))
    failed = sum(1 for record in records if record.status not in (TrialStatus.OK, TrialStatus.SKIPPED))
    if failed:
        log_warning(logger, f"{failed} of {len(records)} rows did not complete")
    return SweepResult(records=records, summary=tuple(summary), files=tuple(str(path) for path in files))
