import logging
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.config import SolverOptions
from app.core.errors import ConeSolverError, ContractViolationError, GuardViolationError
from app.core.logging import log_debug, log_info, log_warning
from app.core.workers import ordered_map
from app.models.admission import (
    AdmissionResult,
    FeasibilityResult,
    InitScheme,
    Stage1Layout,
    UserSelection,
)
from app.models.cone import ConeProgram, QuadraticTerms, SocConstraint
from app.models.network import NetworkInstance
from app.models.precoding import PrecoderSet, ReceiverState
from app.services.cone_solver import quadratic_epigraph, solve_cone_program
from app.services.mmse_core import hermitian_sqrt, stacked_channel, update_receivers
from app.services.network_model import (
    clip_to_power_caps,
    feasibility_violations,
    restrict_instance,
    with_rate_target,
)

logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_USERS = 10


def _default_rng(instance: NetworkInstance, users: Sequence[int]) -> np.random.Generator:
    seed = np.random.SeedSequence([instance.config.rng_seed, len(users), *users])
    return np.random.Generator(np.random.Philox(seed))


def init_precoders(
    instance: NetworkInstance,
    users: Sequence[int],
    scheme: InitScheme = InitScheme.SVD,
    rng: Optional[np.random.Generator] = None,
) -> PrecoderSet:
    """Starting precoders meeting every RRH power cap with equality"""
    users = tuple(sorted(users))
    if not users:
        raise ContractViolationError("cannot initialize precoders for an empty user set")
    rng = rng or _default_rng(instance, users)
    streams, tx = instance.streams, instance.tx_antennas
    load = {i: sum(1 for k in users if i in instance.candidate_rrhs[k]) for i in range(instance.num_rrhs)}

    blocks: Dict[Tuple[int, int], np.ndarray] = {}
    for k in users:
        for i in instance.candidate_rrhs[k]:
            share = instance.p_max[i] / load[i]
            if scheme == InitScheme.SVD:
                _, _, vh = np.linalg.svd(instance.channels[i, k])
                direction = vh[:streams].conj().T
            else:
                draw = rng.standard_normal((tx, streams, 2))
                direction = draw[..., 0] + 1j * draw[..., 1]
            blocks[(i, k)] = direction * np.sqrt(share / np.sum(np.abs(direction) ** 2))
    return PrecoderSet(blocks=blocks, users=users)


def stage1_layout(
    instance: NetworkInstance, users: Sequence[int], fixed_users: Sequence[int] = ()
) -> Stage1Layout:
    users = tuple(sorted(users))
    streams, tx = instance.streams, instance.tx_antennas
    serving = {k: tuple(sorted(instance.candidate_rrhs[k])) for k in users}
    offsets, cursor = {}, 0
    for k in users:
        offsets[k] = cursor
        cursor += 2 * len(serving[k]) * tx * streams
    alpha_index = {}
    for k in users:
        if k not in fixed_users:
            alpha_index[k] = cursor
            cursor += 1
    return Stage1Layout(
        users=users,
        serving=serving,
        offsets=offsets,
        alpha_index=alpha_index,
        fixed_users=tuple(sorted(fixed_users)),
        s_index=cursor,
        num_variables=cursor + 1,
        tx_antennas=tx,
        streams=streams,
    )


def complex_map(matrix: np.ndarray, real: np.ndarray, imag: np.ndarray, n: int) -> np.ndarray:
    """Real rows of vec(matrix @ V) for V stored at (real, imag) indices, row-major"""
    streams = real.shape[1]
    lifted = np.kron(matrix, np.eye(streams))
    size = lifted.shape[0]
    rows = np.zeros((2 * size, n))
    cols_re, cols_im = real.ravel(), imag.ravel()
    rows[:size, cols_re] = lifted.real
    rows[:size, cols_im] = -lifted.imag
    rows[size:, cols_re] = lifted.imag
    rows[size:, cols_im] = lifted.real
    return rows


def rate_budget(instance: NetworkInstance, receivers: ReceiverState, k: int) -> float:
    """log|W_k| + d - sigma_k^2 Tr(U_k^H U_k W_k)"""
    receiver, weight = receivers.pair(k)
    _, logdet = np.linalg.slogdet(weight)
    noise_term = instance.noise_powers[k] * np.real(np.trace(receiver.conj().T @ receiver @ weight))
    return float(logdet + weight.shape[0] - noise_term)


def rate_cone_rows(
    instance: NetworkInstance, layout: Stage1Layout, receivers: ReceiverState, k: int
) -> Tuple[np.ndarray, np.ndarray]:
    """(A, b) with ||A z + b||^2 = sum_j ||W^1/2 (U^H H_jk V_j - delta_jk I)||_F^2"""
    receiver, weight = receivers.pair(k)
    weight_sqrt = hermitian_sqrt(weight)
    rows, offsets = [], []
    for j in layout.users:
        mixing = weight_sqrt @ receiver.conj().T @ stacked_channel(instance, layout.serving[j], k)
        real, imag = layout.precoder_indices(j)
        rows.append(complex_map(mixing, real, imag, layout.num_variables))
        if j == k:
            offsets.append(np.concatenate([-weight_sqrt.real.ravel(), -weight_sqrt.imag.ravel()]))
        else:
            offsets.append(np.zeros(2 * mixing.shape[0] * layout.streams))
    return np.vstack(rows), np.concatenate(offsets)


def power_cone(instance: NetworkInstance, layout: Stage1Layout, i: int) -> Optional[SocConstraint]:
    """||y_i|| <= sqrt(P_max), y_i the real entries of every block RRH i transmits"""
    indices = [layout.block_indices(i, k) for k in layout.users if i in layout.serving[k]]
    if not indices:
        return None
    columns = np.concatenate(indices)
    A = np.zeros((columns.size, layout.num_variables))
    A[np.arange(columns.size), columns] = 1.0
    return SocConstraint(
        A=A, b=np.zeros(columns.size), c=np.zeros(layout.num_variables), d=float(np.sqrt(instance.p_max[i]))
    )


def build_stage1_program(
    instance: NetworkInstance, users: Sequence[int], receivers: ReceiverState
) -> Tuple[ConeProgram, Stage1Layout]:
    budgets = {k: rate_budget(instance, receivers, k) for k in users}
    fixed = [k for k, budget in budgets.items() if budget <= 0.0]
    for k in fixed:
        log_debug(logger, f"User {k} has no rate budget; alpha fixed at 0", user=k)
    layout = stage1_layout(instance, users, fixed)
    n = layout.num_variables
    constraints: List[SocConstraint] = []

    for k in layout.users:
        if k in fixed:
            continue
        A, b = rate_cone_rows(instance, layout, receivers, k)
        tail = np.zeros((1, n))
        tail[0, layout.alpha_index[k]] = np.sqrt(instance.rate_min)
        constraints.append(
            SocConstraint(
                A=np.vstack([A, tail]),
                b=np.concatenate([b, [0.0]]),
                c=np.zeros(n),
                d=float(np.sqrt(budgets[k])),
            )
        )
    for i in range(instance.num_rrhs):
        cone = power_cone(instance, layout, i)
        if cone is not None:
            constraints.append(cone)

    # alpha is left unboxed; the optimum already lies in [0, 1]
    diagonal, linear = np.zeros(n), np.zeros(n)
    for index in layout.alpha_index.values():
        diagonal[index] = 1.0
        linear[index] = -2.0
    terms = QuadraticTerms(diagonal=diagonal, linear=linear, constant=float(len(layout.users)))
    constraints.append(quadratic_epigraph(terms, layout.s_index))

    objective = np.zeros(n)
    objective[layout.s_index] = 1.0
    return ConeProgram(objective=objective, constraints=constraints), layout


def _extract(layout: Stage1Layout, z: np.ndarray) -> Tuple[PrecoderSet, Dict[int, float]]:
    stacked = {}
    for k in layout.users:
        real, imag = layout.precoder_indices(k)
        stacked[k] = z[real] + 1j * z[imag]
    alphas = {
        k: float(np.clip(abs(z[layout.alpha_index[k]]), 0.0, 1.0)) if k in layout.alpha_index else 0.0
        for k in layout.users
    }
    return PrecoderSet.from_stacked(stacked, layout.serving, layout.tx_antennas), alphas


def _shortfall(alphas: Mapping[int, float]) -> float:
    return float(sum((a - 1.0) ** 2 for a in alphas.values()))


def _admitted(alphas: Mapping[int, float], tol: float) -> Tuple[int, ...]:
    return tuple(k for k in sorted(alphas) if alphas[k] >= 1.0 - tol)


def solve_alternative_problem(
    instance: NetworkInstance,
    users: Sequence[int],
    init: PrecoderSet,
    n_max: Optional[int] = None,
    options: Optional[SolverOptions] = None,
) -> AdmissionResult:
    """Alternate cone-program (alpha, V) updates with MMSE (U, W) updates"""
    options = options or SolverOptions()
    n_max = options.stage1_n_max if n_max is None else n_max
    users = tuple(sorted(users))
    if not users:
        return AdmissionResult(admitted_users=(), alphas={}, precoders=PrecoderSet({}, ()))

    precoders, alphas = init, {k: 0.0 for k in users}
    receivers = update_receivers(instance, precoders, users)
    trace: List[float] = []
    for iteration in range(n_max):
        program, layout = build_stage1_program(instance, users, receivers)
        solution = solve_cone_program(program, tol=options.cone_tol, max_iter=options.cone_max_iter)
        if not solution.is_solved:
            partial = AdmissionResult(
                admitted_users=_admitted(alphas, options.admission_tol),
                alphas=alphas,
                precoders=precoders,
                objective_trace=tuple(trace),
            )
            raise ConeSolverError(
                f"Stage-I cone program ended with status {solution.status.value}", partial=partial
            )
        candidate, candidate_alphas = _extract(layout, solution.z)
        objective = _shortfall(candidate_alphas)
        if trace and objective > trace[-1]:
            log_debug(logger, f"Stage-I iterate {iteration} rejected: {objective:.3e} > {trace[-1]:.3e}")
            break
        precoders = clip_to_power_caps(instance, candidate)
        alphas = candidate_alphas
        trace.append(objective)
        log_debug(logger, f"Stage-I iteration {iteration}: shortfall {objective:.6e}")
        if len(trace) > 1 and trace[-2] - trace[-1] < options.stage1_decrease_tol:
            break
        receivers = update_receivers(instance, precoders, users)

    return AdmissionResult(
        admitted_users=_admitted(alphas, options.admission_tol),
        alphas=alphas,
        precoders=precoders,
        objective_trace=tuple(trace),
        pass_traces=(tuple(trace),),
    )


def _solve_fresh(
    instance: NetworkInstance,
    users: Sequence[int],
    scheme: InitScheme,
    n_max: Optional[int],
    options: SolverOptions,
) -> AdmissionResult:
    if not users:
        return solve_alternative_problem(instance, (), PrecoderSet({}, ()), n_max, options)
    init = init_precoders(instance, users, scheme)
    return solve_alternative_problem(instance, users, init, n_max, options)


def usc_select_users(
    instance: NetworkInstance,
    n_max: Optional[int] = None,
    scheme: InitScheme = InitScheme.SVD,
    options: Optional[SolverOptions] = None,
) -> AdmissionResult:
    """Drop the user with the smallest alpha until every remaining user is admitted"""
    options = options or SolverOptions()
    users = list(range(instance.num_users))
    removed: List[int] = []
    traces: List[Tuple[float, ...]] = []
    while True:
        result = _solve_fresh(instance, users, scheme, n_max, options)
        traces.append(result.objective_trace)
        if result.all_admitted:
            break
        worst = min(users, key=lambda k: (result.alphas[k], k))
        log_info(logger, f"USC removes user {worst} (alpha={result.alphas[worst]:.4f})", user=worst)
        users.remove(worst)
        removed.append(worst)

    return AdmissionResult(
        admitted_users=result.admitted_users,
        alphas=result.alphas,
        precoders=result.precoders,
        removal_order=tuple(removed),
        objective_trace=result.objective_trace,
        pass_traces=tuple(traces),
        method=UserSelection.USC.value,
        evaluations=len(traces),
    )


def _evaluate_subset(task: Tuple[NetworkInstance, Tuple[int, ...], InitScheme, Optional[int], SolverOptions]) -> AdmissionResult:
    instance, users, scheme, n_max, options = task
    return _solve_fresh(instance, users, scheme, n_max, options)


def greedy_user_selection(
    instance: NetworkInstance,
    n_max: Optional[int] = None,
    scheme: InitScheme = InitScheme.SVD,
    options: Optional[SolverOptions] = None,
) -> AdmissionResult:
    """Each round remove the user whose exclusion leaves the smallest shortfall"""
    options = options or SolverOptions()
    users: Tuple[int, ...] = tuple(range(instance.num_users))
    removed: List[int] = []
    evaluations = 1
    result = _solve_fresh(instance, users, scheme, n_max, options)
    traces = [result.objective_trace]
    while not result.all_admitted:
        subsets = [tuple(u for u in users if u != k) for k in users]
        outcomes = ordered_map(
            _evaluate_subset,
            [(instance, subset, scheme, n_max, options) for subset in subsets],
            options.workers,
        )
        evaluations += len(outcomes)
        best = min(range(len(users)), key=lambda position: (outcomes[position].objective, users[position]))
        log_info(
            logger,
            f"Greedy user selection removes user {users[best]} "
            f"(remaining shortfall {outcomes[best].objective:.4e})",
        )
        removed.append(users[best])
        users, result = subsets[best], outcomes[best]
        traces.append(result.objective_trace)

    return AdmissionResult(
        admitted_users=result.admitted_users,
        alphas=result.alphas,
        precoders=result.precoders,
        removal_order=tuple(removed),
        objective_trace=result.objective_trace,
        pass_traces=tuple(traces),
        method=UserSelection.GREEDY.value,
        evaluations=evaluations,
    )


def exhaustive_user_selection(
    instance: NetworkInstance,
    n_max: Optional[int] = None,
    scheme: InitScheme = InitScheme.SVD,
    options: Optional[SolverOptions] = None,
) -> AdmissionResult:
    """Largest user subset that is fully admitted; ties go to the least total power"""
    options = options or SolverOptions()
    num_users = instance.num_users
    if num_users > MAX_EXHAUSTIVE_USERS:
        raise GuardViolationError(
            f"exhaustive user selection supports at most {MAX_EXHAUSTIVE_USERS} users, got {num_users}"
        )
    evaluations = 0
    for size in range(num_users, 0, -1):
        subsets = list(combinations(range(num_users), size))
        outcomes = ordered_map(
            _evaluate_subset,
            [(instance, subset, scheme, n_max, options) for subset in subsets],
            options.workers,
        )
        evaluations += len(outcomes)
        feasible = [outcome for outcome in outcomes if outcome.all_admitted]
        if feasible:
            best = min(feasible, key=lambda outcome: outcome.total_power)
            log_info(logger, f"Exhaustive user selection admits {best.admitted_users}")
            return AdmissionResult(
                admitted_users=best.admitted_users,
                alphas=best.alphas,
                precoders=best.precoders,
                removal_order=tuple(k for k in range(num_users) if k not in best.admitted_users),
                objective_trace=best.objective_trace,
                pass_traces=(best.objective_trace,),
                method=UserSelection.EXHAUSTIVE.value,
                evaluations=evaluations,
            )
    log_warning(logger, "Exhaustive user selection found no admissible user")
    return AdmissionResult(
        admitted_users=(),
        alphas={},
        precoders=PrecoderSet({}, ()),
        removal_order=tuple(range(num_users)),
        method=UserSelection.EXHAUSTIVE.value,
        evaluations=evaluations,
    )


SELECTORS = {
    UserSelection.USC: usc_select_users,
    UserSelection.GREEDY: greedy_user_selection,
    UserSelection.EXHAUSTIVE: exhaustive_user_selection,
}


def select_users(
    instance: NetworkInstance,
    method: UserSelection = UserSelection.USC,
    scheme: InitScheme = InitScheme.SVD,
    options: Optional[SolverOptions] = None,
) -> AdmissionResult:
    return SELECTORS[UserSelection(method)](instance, None, scheme, options)


def check_feasibility(
    instance: NetworkInstance,
    users: Sequence[int],
    active_rrhs: Sequence[int],
    options: Optional[SolverOptions] = None,
) -> FeasibilityResult:
    """Can every user meet its rate target using only active_rrhs?"""
    options = options or SolverOptions()
    users = tuple(sorted(users))
    if not users:
        return FeasibilityResult(feasible=True, witness=PrecoderSet({}, ()))
    restricted = restrict_instance(instance, active_rrhs)
    if any(not restricted.candidate_rrhs[k] for k in users):
        return FeasibilityResult(feasible=False, witness=PrecoderSet({}, users))
    result = _solve_fresh(restricted, users, InitScheme.SVD, None, options)
    witness = tighten_rates(restricted, users, result.precoders, options) if result.all_admitted else None
    feasible = witness is not None
    log_debug(logger, f"Feasibility of RRHs {tuple(sorted(active_rrhs))}: {feasible}")
    return FeasibilityResult(feasible=feasible, witness=result.precoders if witness is None else witness, alphas=result.alphas)


def tighten_rates(
    instance: NetworkInstance,
    users: Sequence[int],
    precoders: PrecoderSet,
    options: Optional[SolverOptions] = None,
) -> Optional[PrecoderSet]:
    """Precoders meeting every rate target to within rate_tol, or None.

    Admitted users only reach alpha >= 1 - admission_tol, which bounds their
    rates below by (1 - admission_tol)^2 R_min. Re-solving from the admitted
    point with the target raised by that factor closes the gap.
    """
    options = options or SolverOptions()
    users = tuple(sorted(users))
    if not feasibility_violations(instance, precoders, users, options.rate_tol, options.power_tol):
        return precoders
    raised = with_rate_target(instance, instance.rate_min / (1.0 - options.admission_tol) ** 2)
    result = solve_alternative_problem(raised, users, precoders, options=options)
    if result.all_admitted and not feasibility_violations(
        instance, result.precoders, users, options.rate_tol, options.power_tol
    ):
        return result.precoders
    log_debug(logger, f"Users {users} meet their targets only within the admission tolerance")
    return None
