"""Lagrangian dual solver for the weighted power minimization subproblem.

The dual function f(lam, mu) is minimized over lam, mu >= 0 by block
coordinate descent: projected Newton steps on lam, projected gradient steps
on mu, each with Armijo backtracking. Primal precoders follow in closed form
from the multipliers.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.config import SolverOptions
from app.core.errors import ConeSolverError, ContractViolationError
from app.core.logging import log_debug, log_warning
from app.models.cone import ConeProgram, QuadraticTerms, SocConstraint
from app.models.dual import BcdResult, DualState, KktReport, NewtonReport, Pair, WpmSubproblem
from app.models.network import NetworkInstance
from app.models.precoding import PrecoderSet, ReceiverState
from app.services.cone_solver import quadratic_epigraph, solve_cone_program
from app.services.mmse_core import stacked_channel
from app.services.stage1_admission import power_cone, rate_budget, rate_cone_rows, stage1_layout

logger = logging.getLogger(__name__)

LEVENBERG_DAMPING = 1e-10
MIN_STEP = 1e-12


def build_wpm_subproblem(
    instance: NetworkInstance,
    users: Sequence[int],
    rrh_weights: np.ndarray,
    receivers: ReceiverState,
) -> WpmSubproblem:
    """Precompute every multiplier-independent matrix of the subproblem"""
    users = tuple(sorted(users))
    tx = instance.tx_antennas
    serving = {k: tuple(sorted(instance.candidate_rrhs[k])) for k in users}
    gains, slices = {}, {}
    for k in users:
        slices[k] = {i: slice(p * tx, (p + 1) * tx) for p, i in enumerate(serving[k])}
        gains[k] = np.repeat(np.asarray(rrh_weights, dtype=float)[list(serving[k])], tx)

    h_tilde: Dict[Pair, np.ndarray] = {}
    h_breve: Dict[Pair, np.ndarray] = {}
    h_hat: Dict[Pair, np.ndarray] = {}
    for k in users:
        receiver, weight = receivers.pair(k)
        for j in users:
            tilde = stacked_channel(instance, serving[j], k).conj().T @ receiver
            breve = tilde @ weight
            hat = breve @ tilde.conj().T
            h_tilde[(j, k)] = tilde
            h_breve[(j, k)] = breve
            h_hat[(j, k)] = (hat + hat.conj().T) / 2

    constants = np.array(
        [
            rate_budget(instance, receivers, k)
            - instance.rate_min
            - float(np.real(np.trace(receivers.weights[k])))
            for k in users
        ]
    )
    return WpmSubproblem(
        instance=instance,
        receivers=receivers,
        users=users,
        serving=serving,
        rrh_weights=np.asarray(rrh_weights, dtype=float),
        gains=gains,
        slices=slices,
        h_tilde=h_tilde,
        h_breve=h_breve,
        h_hat=h_hat,
        constants=constants,
        p_max=instance.p_max.copy(),
        rate_min=instance.rate_min,
    )


def assemble_gbar(sub: WpmSubproblem, lam: np.ndarray, mu: np.ndarray, k: int) -> np.ndarray:
    gbar = np.diag(sub.gains[k]).astype(complex)
    for position, j in enumerate(sub.users):
        if lam[position] != 0.0:
            gbar += lam[position] * sub.h_hat[(k, j)]
    for i, block in sub.slices[k].items():
        gbar[block, block] += mu[i] * np.eye(block.stop - block.start)
    return gbar


def refresh_state(sub: WpmSubproblem, lam: np.ndarray, mu: np.ndarray) -> DualState:
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    g_tilde, C, F, D = {}, {}, {}, {}
    for position, k in enumerate(sub.users):
        gbar = assemble_gbar(sub, lam, mu, k)
        factor = linalg.cho_factor(gbar)
        inverse = linalg.cho_solve(factor, np.eye(gbar.shape[0], dtype=complex))
        g_tilde[k] = (inverse + inverse.conj().T) / 2
        C[k] = g_tilde[k] @ sub.h_breve[(k, k)]
        F[k] = sub.h_breve[(k, k)].conj().T @ C[k]
        D[k] = C[k] @ C[k].conj().T
    Y, Y_tilde, Z = {}, {}, {}
    for j in sub.users:
        for k in sub.users:
            Y[(j, k)] = C[j].conj().T @ sub.h_hat[(j, k)]
            Y_tilde[(j, k)] = Y[(j, k)] @ g_tilde[j]
            Z[(j, k)] = Y[(j, k)] @ C[j]
    value = float(
        sum(lam[p] ** 2 * np.real(np.trace(F[k])) for p, k in enumerate(sub.users))
        + lam @ sub.constants
        + mu @ sub.p_max
    )
    return DualState(
        owner=sub, lam=lam, mu=mu, g_tilde=g_tilde, C=C, F=F, D=D, Y=Y, Y_tilde=Y_tilde, Z=Z, value=value
    )


def _check_owner(sub: WpmSubproblem, state: DualState) -> None:
    if state.owner is not sub:
        raise ContractViolationError("dual state was computed for a different subproblem")


def dual_value(sub: WpmSubproblem, lam: np.ndarray, mu: np.ndarray) -> float:
    return refresh_state(sub, lam, mu).value


def primal_from_dual(sub: WpmSubproblem, state: DualState) -> PrecoderSet:
    _check_owner(sub, state)
    stacked = {k: state.lam[p] * state.C[k] for p, k in enumerate(sub.users)}
    return PrecoderSet.from_stacked(stacked, sub.serving, sub.instance.tx_antennas)


def grad_lambda(sub: WpmSubproblem, state: DualState) -> np.ndarray:
    _check_owner(sub, state)
    lam = state.lam
    grad = np.empty(sub.num_users)
    for p, k in enumerate(sub.users):
        interference = sum(
            lam[q] ** 2 * np.real(np.trace(state.Z[(j, k)])) for q, j in enumerate(sub.users)
        )
        grad[p] = 2.0 * lam[p] * np.real(np.trace(state.F[k])) - interference + sub.constants[p]
    return grad


def hessian_lambda(sub: WpmSubproblem, state: DualState) -> np.ndarray:
    _check_owner(sub, state)
    lam, users = state.lam, sub.users
    size = len(users)
    hessian = np.zeros((size, size))
    for a, ka in enumerate(users):
        for b in range(a, size):
            kb = users[b]
            entry = -2.0 * lam[a] * np.real(np.trace(state.Z[(ka, kb)]))
            entry -= 2.0 * lam[b] * np.real(np.trace(state.Z[(kb, ka)]))
            entry += 2.0 * sum(
                lam[q] ** 2 * np.real(np.trace(state.Y_tilde[(j, kb)] @ state.Y[(j, ka)].conj().T))
                for q, j in enumerate(users)
            )
            if a == b:
                entry += 2.0 * np.real(np.trace(state.F[ka]))
            hessian[a, b] = hessian[b, a] = entry
    return hessian


def grad_mu(sub: WpmSubproblem, state: DualState) -> np.ndarray:
    _check_owner(sub, state)
    grad = sub.p_max.copy()
    for p, k in enumerate(sub.users):
        diagonal = np.real(np.diag(state.D[k]))
        for i, block in sub.slices[k].items():
            grad[i] -= state.lam[p] ** 2 * float(np.sum(diagonal[block]))
    return grad


def _newton_direction(hessian: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        return -linalg.cho_solve(linalg.cho_factor(hessian), grad)
    except linalg.LinAlgError:
        pass
    try:
        damped = hessian + LEVENBERG_DAMPING * np.eye(hessian.shape[0])
        return -linalg.cho_solve(linalg.cho_factor(damped), grad)
    except linalg.LinAlgError:
        log_debug(logger, "Hessian singular after damping; taking a gradient step")
        return -grad


def _armijo(
    sub: WpmSubproblem,
    state: DualState,
    direction: np.ndarray,
    slope: float,
    xi: float,
    phi: float,
    on_lambda: bool,
) -> Tuple[Optional[DualState], float]:
    """Backtrack along direction until the Armijo condition holds"""
    step = 1.0
    while step >= MIN_STEP:
        if on_lambda:
            trial = refresh_state(sub, np.maximum(state.lam + step * direction, 0.0), state.mu)
        else:
            trial = refresh_state(sub, state.lam, np.maximum(state.mu + step * direction, 0.0))
        if trial.value <= state.value + xi * step * slope:
            return trial, step
        step *= phi
    return None, 0.0


def _newton_lambda_state(
    sub: WpmSubproblem, state: DualState, t_max: int, xi: float, phi: float, tol: float
) -> Tuple[DualState, NewtonReport]:
    values, steps = [state.value], []
    decrement = np.inf
    iteration = 0
    for iteration in range(1, t_max + 1):
        grad = grad_lambda(sub, state)
        free = (state.lam > 0.0) | (grad < 0.0)
        if not np.any(free):
            decrement = 0.0
            break
        delta = np.zeros_like(grad)
        delta[free] = _newton_direction(hessian_lambda(sub, state)[np.ix_(free, free)], grad[free])
        decrement = float(-grad[free] @ delta[free])
        if decrement / 2.0 <= tol:
            break
        direction = np.maximum(state.lam + delta, 0.0) - state.lam
        slope = float(grad @ direction)
        if slope >= 0.0:
            direction = np.maximum(state.lam - grad, 0.0) - state.lam
            slope = float(grad @ direction)
            if slope >= 0.0:
                break
        trial, step = _armijo(sub, state, direction, slope, xi, phi, on_lambda=True)
        if trial is None:
            break
        state = trial
        values.append(state.value)
        steps.append(step)
    return state, NewtonReport(iterations=iteration, decrement=decrement, values=tuple(values), steps=tuple(steps))


def newton_lambda(
    sub: WpmSubproblem,
    mu: np.ndarray,
    lam_init: np.ndarray,
    t_max: int = 15,
    xi: float = 0.01,
    phi: float = 0.5,
    tol: float = 1e-10,
) -> Tuple[np.ndarray, NewtonReport]:
    """Projected Newton minimization of f over lam >= 0 at fixed mu"""
    state = refresh_state(sub, np.maximum(lam_init, 0.0), mu)
    state, report = _newton_lambda_state(sub, state, t_max, xi, phi, tol)
    return state.lam, report


def _gradient_mu_state(
    sub: WpmSubproblem, state: DualState, t_max: int, eps: float, xi: float, phi: float
) -> Tuple[DualState, int]:
    iteration = 0
    for iteration in range(1, t_max + 1):
        grad = grad_mu(sub, state)
        direction = np.maximum(state.mu - grad, 0.0) - state.mu
        if np.linalg.norm(direction) <= 1e-14 * (1.0 + np.linalg.norm(state.mu)):
            break
        previous = state.value
        trial, _ = _armijo(sub, state, direction, float(grad @ direction), xi, phi, on_lambda=False)
        if trial is None:
            break
        state = trial
        if abs(previous - state.value) <= eps * max(abs(state.value), 1e-12):
            break
    return state, iteration


def gradient_mu(
    sub: WpmSubproblem,
    lam: np.ndarray,
    mu_init: np.ndarray,
    t_max: int = 20,
    eps: float = 1e-3,
    xi: float = 0.01,
    phi: float = 0.5,
) -> Tuple[np.ndarray, int]:
    """Projected gradient minimization of f over mu >= 0 at fixed lam"""
    state = refresh_state(sub, lam, np.maximum(mu_init, 0.0))
    state, iterations = _gradient_mu_state(sub, state, t_max, eps, xi, phi)
    return state.mu, iterations


def precoder_powers(sub: WpmSubproblem, precoders: PrecoderSet) -> np.ndarray:
    return np.array([precoders.transmit_power(i) for i in range(sub.num_rrhs)])


def rate_slack(sub: WpmSubproblem, precoders: PrecoderSet) -> np.ndarray:
    """h_k(V) - R_min for every user, at the subproblem's receivers"""
    stacked = {k: precoders.stacked(k) for k in sub.users}
    slack = np.empty(sub.num_users)
    for p, k in enumerate(sub.users):
        quadratic = sum(
            np.real(np.trace(stacked[j].conj().T @ sub.h_hat[(j, k)] @ stacked[j])) for j in sub.users
        )
        linear = 2.0 * np.real(np.trace(sub.h_breve[(k, k)].conj().T @ stacked[k]))
        slack[p] = sub.constants[p] - quadratic + linear
    return slack


def wpm_objective(sub: WpmSubproblem, precoders: PrecoderSet) -> float:
    return float(
        sum(sub.gains[k] @ np.sum(np.abs(precoders.stacked(k)) ** 2, axis=1) for k in sub.users)
    )


def kkt_report(sub: WpmSubproblem, state: DualState, precoders: PrecoderSet) -> KktReport:
    stationarity = 0.0
    for p, k in enumerate(sub.users):
        gbar = assemble_gbar(sub, state.lam, state.mu, k)
        target = state.lam[p] * sub.h_breve[(k, k)]
        residual = np.linalg.norm(gbar @ precoders.stacked(k) - target)
        stationarity = max(stationarity, float(residual / (1.0 + np.linalg.norm(target))))
    slack = rate_slack(sub, precoders)
    power_gap = sub.p_max - precoder_powers(sub, precoders)
    return KktReport(
        stationarity=stationarity,
        rate_slackness=float(np.max(np.abs(state.lam * slack), initial=0.0)),
        power_slackness=float(np.max(np.abs(state.mu * power_gap), initial=0.0)),
        rate_violation=float(np.max(np.maximum(-slack, 0.0), initial=0.0)),
        power_violation=float(np.max(np.maximum(-power_gap, 0.0), initial=0.0)),
        primal_objective=wpm_objective(sub, precoders),
        dual_objective=-state.value,
    )


def bcd_solve(
    sub: WpmSubproblem,
    n_max: Optional[int] = None,
    eps: Optional[float] = None,
    options: Optional[SolverOptions] = None,
    lam0: Optional[np.ndarray] = None,
    mu0: Optional[np.ndarray] = None,
    kkt_tol: Optional[float] = None,
) -> BcdResult:
    """Alternate Newton steps on lam and gradient steps on mu"""
    options = options or SolverOptions()
    n_max = options.bcd_n_max if n_max is None else n_max
    eps = options.bcd_eps if eps is None else eps
    kkt_tol = options.bcd_kkt_tol if kkt_tol is None else kkt_tol
    lam = np.ones(sub.num_users) if lam0 is None else np.maximum(np.asarray(lam0, dtype=float), 0.0)
    mu = np.ones(sub.num_rrhs) if mu0 is None else np.maximum(np.asarray(mu0, dtype=float), 0.0)

    state = refresh_state(sub, lam, mu)
    values: List[float] = []
    newton_counts: List[int] = []
    gradient_counts: List[int] = []
    records: List[Dict[str, object]] = []
    converged = False
    iteration = 0
    kkt = kkt_report(sub, state, primal_from_dual(sub, state))
    for iteration in range(1, n_max + 1):
        state, newton = _newton_lambda_state(
            sub, state, options.newton_t_max, options.armijo_xi, options.armijo_phi, options.newton_tol
        )
        state, gradient_steps = _gradient_mu_state(
            sub, state, options.grad_t_max, options.bcd_eps, options.armijo_xi, options.armijo_phi
        )
        newton_counts.append(newton.iterations)
        gradient_counts.append(gradient_steps)
        precoders = primal_from_dual(sub, state)
        kkt = kkt_report(sub, state, precoders)
        values.append(state.value)
        if options.verbose:
            records.append({"iteration": iteration, **state.to_dict(), "kkt": kkt.to_dict()})
        log_debug(
            logger,
            f"BCD iteration {iteration}: f={state.value:.10e} kkt={kkt.max_residual:.2e}",
        )
        if len(values) > 1:
            change = abs(values[-1] - values[-2]) / max(abs(values[-1]), 1e-12)
            if change < eps and kkt.max_residual < kkt_tol:
                converged = True
                break

    if not converged:
        log_warning(
            logger,
            f"BCD stopped after {iteration} iterations with KKT residual {kkt.max_residual:.2e}",
        )
    return BcdResult(
        precoders=primal_from_dual(sub, state),
        state=state,
        kkt=kkt,
        converged=converged,
        iterations=iteration,
        values=tuple(values),
        newton_iterations=tuple(newton_counts),
        gradient_iterations=tuple(gradient_counts),
        debug_records=records,
    )


def socp_oracle(sub: WpmSubproblem, options: Optional[SolverOptions] = None) -> Tuple[PrecoderSet, float]:
    """Solve the same subproblem as a cone program"""
    options = options or SolverOptions()
    instance = sub.instance
    layout = stage1_layout(instance, sub.users, fixed_users=sub.users)
    n = layout.num_variables
    constraints: List[SocConstraint] = []
    diagonal = np.zeros(n)
    for p, k in enumerate(sub.users):
        A, b = rate_cone_rows(instance, layout, sub.receivers, k)
        budget = sub.constants[p] + float(np.real(np.trace(sub.receivers.weights[k])))
        constraints.append(SocConstraint(A=A, b=b, c=np.zeros(n), d=float(np.sqrt(max(budget, 0.0)))))
        for i in sub.serving[k]:
            diagonal[layout.block_indices(i, k)] = sub.rrh_weights[i]
    for i in range(instance.num_rrhs):
        cone = power_cone(instance, layout, i)
        if cone is not None:
            constraints.append(cone)
    constraints.append(quadratic_epigraph(QuadraticTerms(diagonal, np.zeros(n), 0.0), layout.s_index))
    objective = np.zeros(n)
    objective[layout.s_index] = 1.0

    solution = solve_cone_program(
        ConeProgram(objective=objective, constraints=constraints),
        tol=options.cone_tol,
        max_iter=options.cone_max_iter,
    )
    if not solution.is_solved:
        raise ConeSolverError(f"oracle cone program ended with status {solution.status.value}", partial=solution)
    stacked = {}
    for k in sub.users:
        real, imag = layout.precoder_indices(k)
        stacked[k] = solution.z[real] + 1j * solution.z[imag]
    precoders = PrecoderSet.from_stacked(stacked, layout.serving, layout.tx_antennas)
    return precoders, wpm_objective(sub, precoders)
