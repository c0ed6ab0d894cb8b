import logging
import time
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.config import SolverOptions
from app.core.errors import InfeasibleError
from app.core.logging import log_debug, log_info, log_warning
from app.models.dual import KktReport, WpmSubproblem
from app.models.network import NetworkInstance
from app.models.precoding import PrecoderSet
from app.models.sparse import PowerMinimization, RlnResult, RlnState, RlnWeights, SolverTiming, WmmseResult
from app.services.dual_bcd import (
    bcd_solve,
    build_wpm_subproblem,
    kkt_report,
    rate_slack,
    socp_oracle,
    wpm_objective,
)
from app.services.mmse_core import update_receivers
from app.services.network_model import (
    clip_to_power_caps,
    feasibility_violations,
    npc,
    restrict_instance,
    transmit_powers,
    user_rates,
)
from app.services.stage1_admission import check_feasibility, tighten_rates

logger = logging.getLogger(__name__)

BISECTION_STEPS = 40


def rln_weights(
    precoders: PrecoderSet, instance: NetworkInstance, delta: float, users: Sequence[int]
) -> RlnWeights:
    if delta <= 0:
        raise ValueError("delta must be positive")
    scheduled = set(users)
    powers = transmit_powers(precoders, instance.num_rrhs)
    raw = 1.0 / (powers + delta)
    carried = np.array([sum(1 for k in instance.candidate_users[i] if k in scheduled) for i in range(instance.num_rrhs)])
    p_tilde_c = instance.rho * carried * instance.rate_min + instance.circuit_power
    return RlnWeights(weights=instance.eta + raw * p_tilde_c, raw_weights=raw, p_tilde_c=p_tilde_c, delta=delta)


def extract_active_set(precoders: PrecoderSet, instance: NetworkInstance, theta_off: float) -> Tuple[int, ...]:
    powers = transmit_powers(precoders, instance.num_rrhs)
    return tuple(int(i) for i in np.flatnonzero(powers > theta_off))


def weighted_power(precoders: PrecoderSet, weights: np.ndarray) -> float:
    return float(weights @ transmit_powers(precoders, weights.size))


def _blend(previous: PrecoderSet, candidate: PrecoderSet, t: float) -> PrecoderSet:
    return PrecoderSet(
        blocks={key: (1.0 - t) * v + t * candidate.blocks[key] for key, v in previous.blocks.items()},
        users=previous.users,
    )


def _restore(
    sub: WpmSubproblem,
    instance: NetworkInstance,
    previous: PrecoderSet,
    candidate: PrecoderSet,
    rate_tol: float,
) -> Tuple[PrecoderSet, float]:
    """Largest step from previous toward candidate that keeps the subproblem feasible"""
    floor = np.minimum(rate_slack(sub, previous), -rate_tol)

    def admissible(point: PrecoderSet) -> bool:
        powers = transmit_powers(point, instance.num_rrhs)
        return bool(np.all(rate_slack(sub, point) >= floor) and np.all(powers <= instance.p_max * (1.0 + 1e-12)))

    if admissible(candidate):
        return candidate, 1.0
    low, high = 0.0, 1.0
    for _ in range(BISECTION_STEPS):
        middle = (low + high) / 2.0
        if admissible(_blend(previous, candidate, middle)):
            low = middle
        else:
            high = middle
    return _blend(previous, candidate, low), low


def wmmse_solve_wpm(
    instance: NetworkInstance,
    users: Sequence[int],
    weights: np.ndarray,
    v_init: PrecoderSet,
    l_max: Optional[int] = None,
    eps: Optional[float] = None,
    options: Optional[SolverOptions] = None,
) -> WmmseResult:
    """Minimize sum_i w_i P_i subject to rate targets and power caps, from a feasible start"""
    options = options or SolverOptions()
    l_max = options.wmmse_l_max if l_max is None else l_max
    eps = options.wmmse_eps if eps is None else eps
    users = tuple(sorted(users))
    weights = np.asarray(weights, dtype=float)
    if not users:
        return WmmseResult(precoders=v_init, objective_trace=(0.0,), iterations=0)

    problems = feasibility_violations(
        instance, v_init, users, rate_tol=options.rate_tol, power_tol=1e-6
    )
    if problems:
        raise InfeasibleError("initial precoders are infeasible: " + "; ".join(problems))

    precoders = clip_to_power_caps(instance, v_init)
    trace = [weighted_power(precoders, weights)]
    bcd_iterations: List[int] = []
    records: List[Dict[str, object]] = []
    lam0 = mu0 = None
    bcd_converged, kkt_residual, restored = True, 0.0, 0
    iteration = 0
    for iteration in range(1, l_max + 1):
        receivers = update_receivers(instance, precoders, users)
        sub = build_wpm_subproblem(instance, users, weights, receivers)
        bcd = bcd_solve(sub, options=options, lam0=lam0, mu0=mu0)
        bcd_iterations.append(bcd.iterations)
        records.extend({"wmmse_iteration": iteration, **record} for record in bcd.debug_records)
        bcd_converged = bcd_converged and bcd.converged
        kkt_residual = bcd.kkt.max_residual
        if options.dual_warm_start:
            lam0, mu0 = bcd.state.lam, bcd.state.mu

        candidate, step = _restore(sub, instance, precoders, clip_to_power_caps(instance, bcd.precoders), options.rate_tol)
        if step < 1.0:
            restored += 1
            log_debug(logger, f"WMMSE iteration {iteration}: step shortened to {step:.3e} for feasibility")
        objective = weighted_power(candidate, weights)
        if step == 0.0 or objective > trace[-1]:
            log_debug(logger, f"WMMSE iteration {iteration} made no progress; keeping previous precoders")
            break
        precoders = candidate
        trace.append(objective)
        log_debug(logger, f"WMMSE iteration {iteration}: weighted power {objective:.8e}")
        if trace[-2] - trace[-1] < eps * max(trace[-2], 1e-12):
            break

    if not bcd_converged:
        log_warning(logger, f"Dual solver did not fully converge (last KKT residual {kkt_residual:.2e})")
    return WmmseResult(
        precoders=precoders,
        objective_trace=tuple(trace),
        iterations=iteration,
        bcd_iterations=tuple(bcd_iterations),
        bcd_converged=bcd_converged,
        kkt_residual=kkt_residual,
        restored_steps=restored,
        debug_records=tuple(records),
    )


def wpm_kkt_residuals(
    instance: NetworkInstance,
    users: Sequence[int],
    weights: np.ndarray,
    precoders: PrecoderSet,
    options: Optional[SolverOptions] = None,
) -> KktReport:
    """KKT residuals of precoders against the subproblem built at their own receivers"""
    options = options or SolverOptions()
    users = tuple(sorted(users))
    sub = build_wpm_subproblem(instance, users, np.asarray(weights, dtype=float), update_receivers(instance, precoders, users))
    return kkt_report(sub, bcd_solve(sub, options=options).state, precoders)


def solve_power_minimization(
    instance: NetworkInstance,
    users: Sequence[int],
    active_rrhs: Sequence[int],
    options: Optional[SolverOptions] = None,
) -> Optional[PowerMinimization]:
    """Feasibility check on active_rrhs, then transmit power minimization (omega = eta)"""
    options = options or SolverOptions()
    users = tuple(sorted(users))
    active = tuple(sorted(active_rrhs))
    feasibility = check_feasibility(instance, users, active, options)
    if not feasibility:
        return None
    restricted = restrict_instance(instance, active)
    result = wmmse_solve_wpm(restricted, users, restricted.eta, feasibility.witness, options=options)
    rates = user_rates(restricted, result.precoders, users) if users else {}
    breakdown = npc(instance, result.precoders, rates, active)
    return PowerMinimization(active_set=active, precoders=result.precoders, rates=rates, npc=breakdown, wmmse=result)


def _iterate_npc(instance: NetworkInstance, precoders: PrecoderSet, users: Sequence[int], active: Tuple[int, ...]) -> float:
    rates: Mapping[int, float] = user_rates(instance, precoders, users)
    return npc(instance, precoders.restricted(active), rates, active).full_npc


def rln_solve(
    instance: NetworkInstance,
    users: Sequence[int],
    v0: PrecoderSet,
    n_max: Optional[int] = None,
    delta: Optional[float] = None,
    options: Optional[SolverOptions] = None,
) -> RlnResult:
    """Reweighted-l1 RRH selection followed by a restricted power minimization"""
    options = options or SolverOptions()
    n_max = options.rln_n_max if n_max is None else n_max
    delta = options.rln_delta if delta is None else delta
    users = tuple(sorted(users))

    start = tighten_rates(instance, users, v0, options)
    if start is None:
        raise InfeasibleError("admitted users meet their rate targets only within the admission tolerance")
    precoders = start
    weights = rln_weights(precoders, instance, delta, users)
    npc_trace: List[float] = []
    active_trace: List[int] = []
    wpm_trace: List[float] = []
    wmmse_iterations: List[int] = []
    records: List[Dict[str, object]] = []
    iteration = 0
    for iteration in range(1, n_max + 1):
        result = wmmse_solve_wpm(instance, users, weights.weights, precoders, options=options)
        precoders = result.precoders
        wmmse_iterations.append(result.iterations)
        records.extend({"rln_iteration": iteration, **record} for record in result.debug_records)
        active = extract_active_set(precoders, instance, options.theta_off)
        npc_trace.append(_iterate_npc(instance, precoders, users, active))
        active_trace.append(len(active))
        wpm_trace.append(result.objective_trace[-1])
        weights = rln_weights(precoders, instance, delta, users)
        log_info(
            logger,
            f"RLN iteration {iteration}: {len(active)} active RRHs, NPC {npc_trace[-1]:.4f} W",
            iteration=iteration,
        )
        if (
            iteration > 1
            and active_trace[-1] == active_trace[-2]
            and abs(npc_trace[-1] - npc_trace[-2]) <= options.wmmse_eps * npc_trace[-2]
        ):
            break

    state = RlnState(
        weights=weights,
        iteration=iteration,
        npc_trace=tuple(npc_trace),
        active_count_trace=tuple(active_trace),
        wpm_trace=tuple(wpm_trace),
    )
    active = extract_active_set(precoders, instance, options.theta_off) if users else ()
    final, checks, fallback = _final_resolve(instance, users, precoders, active, options)
    return RlnResult(
        precoders=final.precoders,
        npc=final.npc,
        state=state,
        rates=final.rates,
        last_iterate=precoders,
        feasibility_checks=checks,
        fallback_used=fallback,
        wmmse_iterations=tuple(wmmse_iterations),
        debug_records=tuple(records),
    )


def _final_resolve(
    instance: NetworkInstance,
    users: Tuple[int, ...],
    precoders: PrecoderSet,
    active: Tuple[int, ...],
    options: SolverOptions,
) -> Tuple[PowerMinimization, int, bool]:
    checks = 1
    result = solve_power_minimization(instance, users, active, options)
    if result is not None:
        return result, checks, False

    log_warning(logger, f"Active set {active} infeasible after RLN; lowering the off threshold")
    powers = transmit_powers(precoders, instance.num_rrhs)
    cluster = instance.cluster_rrhs(users)
    order = sorted(cluster, key=lambda i: (-powers[i], i))
    for size in range(len(active) + 1, len(order) + 1):
        checks += 1
        result = solve_power_minimization(instance, users, order[:size], options)
        if result is not None:
            return result, checks, True
    raise InfeasibleError("no active RRH set derived from the RLN iterate is feasible")


def time_wpm_solvers(
    instance: NetworkInstance,
    users: Sequence[int],
    v0: PrecoderSet,
    options: Optional[SolverOptions] = None,
) -> SolverTiming:
    """Solve the first RLN subproblem with the cone solver and with dual BCD"""
    options = options or SolverOptions()
    users = tuple(sorted(users))
    if not users:
        raise InfeasibleError("no admitted users to time")
    weights = rln_weights(v0, instance, options.rln_delta, users)
    sub = build_wpm_subproblem(instance, users, weights.weights, update_receivers(instance, v0, users))

    started = time.perf_counter()
    _, socp_objective = socp_oracle(sub, options)
    socp_seconds = time.perf_counter() - started

    started = time.perf_counter()
    bcd = bcd_solve(sub, options=options)
    bcd_seconds = time.perf_counter() - started

    timing = SolverTiming(
        socp_seconds=socp_seconds,
        bcd_seconds=bcd_seconds,
        socp_objective=socp_objective,
        bcd_objective=wpm_objective(sub, bcd.precoders),
    )
    log_debug(logger, f"Subproblem solved in {socp_seconds:.4f} s by SOCP and {bcd_seconds:.4f} s by BCD")
    return timing
