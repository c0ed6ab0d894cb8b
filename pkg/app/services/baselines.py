import logging
import time
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

from app.core.config import SolverOptions
from app.core.errors import GuardViolationError, InfeasibleError
from app.core.logging import log_debug, log_info
from app.core.workers import ordered_map
from app.models.baselines import BaselineMethod, BaselineReport
from app.models.network import NetworkInstance
from app.models.sparse import PowerMinimization
from app.services.network_model import feasibility_violations
from app.services.stage2_sparse import solve_power_minimization

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_RRHS = 10

Task = Tuple[NetworkInstance, Tuple[int, ...], Tuple[int, ...], SolverOptions]


def covers(instance: NetworkInstance, users: Sequence[int], active: Sequence[int]) -> bool:
    """Every user keeps at least one candidate RRH in active"""
    keep = set(active)
    return all(keep.intersection(instance.candidate_rrhs[k]) for k in users)


def _evaluate(task: Task) -> Optional[PowerMinimization]:
    instance, users, active, options = task
    return solve_power_minimization(instance, users, active, options)


def _report(
    method: BaselineMethod, result: PowerMinimization, checks: int, started: float
) -> BaselineReport:
    log_info(
        logger,
        f"{method.value}: {len(result.active_set)} active RRHs, NPC {result.npc.full_npc:.4f} W "
        f"after {checks} feasibility checks",
    )
    return BaselineReport(
        method=method,
        active_set=result.active_set,
        precoders=result.precoders,
        npc=result.npc,
        rates=result.rates,
        feasibility_checks=checks,
        wall_clock=time.perf_counter() - started,
    )


def _full(instance: NetworkInstance, users: Tuple[int, ...], options: SolverOptions) -> PowerMinimization:
    result = solve_power_minimization(instance, users, instance.cluster_rrhs(users), options)
    if result is None:
        raise InfeasibleError("rate targets are infeasible even with every candidate RRH active")
    return result


def full_cooperation(
    instance: NetworkInstance, users: Sequence[int], options: Optional[SolverOptions] = None
) -> BaselineReport:
    started = time.perf_counter()
    options = options or SolverOptions()
    result = _full(instance, tuple(sorted(users)), options)
    return _report(BaselineMethod.FULL_COOPERATION, result, 1, started)


def successive_selection(
    instance: NetworkInstance, users: Sequence[int], options: Optional[SolverOptions] = None
) -> BaselineReport:
    """Switch off the weakest RRH until the next removal breaks feasibility"""
    started = time.perf_counter()
    options = options or SolverOptions()
    users = tuple(sorted(users))
    current = _full(instance, users, options)
    checks = 1
    while current.active_set:
        weakest = min(current.active_set, key=lambda i: (current.precoders.transmit_power(i), i))
        candidate = tuple(i for i in current.active_set if i != weakest)
        checks += 1
        if not covers(instance, users, candidate):
            break
        result = solve_power_minimization(instance, users, candidate, options)
        if result is None:
            break
        log_debug(logger, f"Successive selection switched off RRH {weakest}")
        current = result
    return _report(BaselineMethod.SUCCESSIVE_SELECTION, current, checks, started)


def greedy_rrh_selection(
    instance: NetworkInstance, users: Sequence[int], options: Optional[SolverOptions] = None
) -> BaselineReport:
    """Each round switch off the RRH whose removal leaves the least NPC"""
    started = time.perf_counter()
    options = options or SolverOptions()
    users = tuple(sorted(users))
    current = best = _full(instance, users, options)
    checks = 1
    while len(current.active_set) > 1:
        candidates = [
            tuple(i for i in current.active_set if i != removed) for removed in current.active_set
        ]
        candidates = [active for active in candidates if covers(instance, users, active)]
        checks += len(candidates)
        outcomes = ordered_map(
            _evaluate, [(instance, users, active, options) for active in candidates], options.workers
        )
        feasible = [outcome for outcome in outcomes if outcome is not None]
        if not feasible:
            break
        current = min(feasible, key=lambda outcome: (outcome.npc.full_npc, outcome.active_set))
        if current.npc.full_npc < best.npc.full_npc:
            best = current
    return _report(BaselineMethod.GREEDY_SEARCH, best, checks, started)


def exhaustive_rrh_search(
    instance: NetworkInstance, users: Sequence[int], options: Optional[SolverOptions] = None
) -> BaselineReport:
    """Minimum-NPC feasible active set over every covering subset of the cluster"""
    started = time.perf_counter()
    options = options or SolverOptions()
    if instance.num_rrhs > MAX_EXHAUSTIVE_RRHS:
        raise GuardViolationError(
            f"exhaustive RRH search supports at most {MAX_EXHAUSTIVE_RRHS} RRHs, got {instance.num_rrhs}"
        )
    users = tuple(sorted(users))
    cluster = instance.cluster_rrhs(users)
    subsets: List[Tuple[int, ...]] = [
        active
        for size in range(1, len(cluster) + 1)
        for active in combinations(cluster, size)
        if covers(instance, users, active)
    ]
    if not users:
        subsets = [()]
    outcomes = ordered_map(
        _evaluate, [(instance, users, active, options) for active in subsets], options.workers
    )
    feasible = [outcome for outcome in outcomes if outcome is not None]
    if not feasible:
        raise InfeasibleError("no RRH subset meets the rate targets")
    best = min(feasible, key=lambda outcome: (outcome.npc.full_npc, len(outcome.active_set), outcome.active_set))
    return _report(BaselineMethod.EXHAUSTIVE_SEARCH, best, len(subsets), started)


BASELINES = {
    BaselineMethod.FULL_COOPERATION: full_cooperation,
    BaselineMethod.SUCCESSIVE_SELECTION: successive_selection,
    BaselineMethod.GREEDY_SEARCH: greedy_rrh_selection,
    BaselineMethod.EXHAUSTIVE_SEARCH: exhaustive_rrh_search,
}


def run_baseline(
    instance: NetworkInstance,
    users: Sequence[int],
    method: BaselineMethod,
    options: Optional[SolverOptions] = None,
) -> BaselineReport:
    return BASELINES[BaselineMethod(method)](instance, users, options)


def verify_report(
    instance: NetworkInstance,
    users: Sequence[int],
    report: BaselineReport,
    options: Optional[SolverOptions] = None,
) -> List[str]:
    """Re-check rates and power caps of a report from the channel model alone"""
    options = options or SolverOptions()
    problems = feasibility_violations(
        instance,
        report.precoders,
        tuple(sorted(users)),
        options.rate_tol,
        options.power_tol,
    )
    outside = [i for i in report.precoders.rrhs() if i not in report.active_set]
    if outside:
        problems.append(f"RRHs {outside} transmit outside the active set")
    return problems
