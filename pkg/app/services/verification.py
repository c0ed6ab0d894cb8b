import logging
from typing import Callable, List

import numpy as np

from app.core.logging import log_info, log_warning
from app.models.admission import InitScheme
from app.models.dual import WpmSubproblem
from app.models.network import NetworkConfig, NetworkInstance, PowerModel
from app.models.precoding import ReceiverState
from app.models.verification import PropertyCheck, VerificationReport
from app.services.dual_bcd import (
    build_wpm_subproblem,
    dual_value,
    grad_lambda,
    grad_mu,
    hessian_lambda,
    refresh_state,
)
from app.services.mmse_core import h_lower_bound, update_receivers
from app.services.network_model import generate_instance, user_rate
from app.services.stage1_admission import init_precoders

logger = logging.getLogger(__name__)

RATE_BOUND_TOL = 1e-8
GRADIENT_TOL = 1e-5
HESSIAN_TOL = 1e-4
FD_STEP = 1e-6


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def candidate_symmetry(instance: NetworkInstance) -> PropertyCheck:
    """Count of (i, k) pairs where the RRH view and the user view of candidacy disagree"""
    mismatches = 0
    for k, rrhs in enumerate(instance.candidate_rrhs):
        mismatches += len(rrhs) != instance.config.candidate_size
        for i in range(instance.num_rrhs):
            mismatches += (i in rrhs) != (k in instance.candidate_users[i])
    return PropertyCheck("candidate_symmetry", float(mismatches), 0.0)


def _random_weight(rng: np.random.Generator, d: int) -> np.ndarray:
    draw = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return draw @ draw.conj().T + 0.1 * np.eye(d)


def rate_lower_bound(instance: NetworkInstance, rng: np.random.Generator, draws: int) -> List[PropertyCheck]:
    """h_k never exceeds the rate and meets it at the MMSE receiver"""
    users = tuple(range(instance.num_users))
    d, n = instance.streams, instance.rx_antennas
    slack, gap = 0.0, 0.0
    for _ in range(draws):
        precoders = init_precoders(instance, users, InitScheme.RAND, rng)
        optimal = update_receivers(instance, precoders, users)
        for k in users:
            rate = user_rate(instance, precoders, k, users)
            receiver = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
            bound = h_lower_bound(instance, precoders, receiver, _random_weight(rng, d), k, users)
            slack = max(slack, bound - rate)
            tight = h_lower_bound(instance, precoders, *optimal.pair(k), k, users)
            gap = max(gap, abs(tight - rate) / (1.0 + abs(rate)))
    return [
        PropertyCheck("rate_lower_bound", slack, RATE_BOUND_TOL),
        PropertyCheck("rate_bound_tight", gap, RATE_BOUND_TOL),
    ]


def _relative(approx: np.ndarray, exact: np.ndarray) -> float:
    return float(np.max(np.abs(approx - exact)) / max(1.0, float(np.max(np.abs(exact)))))


def _central(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    columns = []
    for p in range(x.size):
        step = FD_STEP * max(1.0, abs(x[p]))
        up, down = x.copy(), x.copy()
        up[p] += step
        down[p] -= step
        columns.append((np.asarray(fn(up)) - np.asarray(fn(down))) / (2.0 * step))
    return np.array(columns).T


def dual_derivatives(sub: WpmSubproblem, rng: np.random.Generator, draws: int) -> List[PropertyCheck]:
    """Analytic gradients and Hessian of the dual against central differences"""
    grad_error = mu_error = hessian_error = asymmetry = 0.0
    curvature = 0.0
    for _ in range(draws):
        lam = rng.uniform(0.5, 2.0, sub.num_users)
        mu = rng.uniform(0.1, 1.0, sub.num_rrhs)
        state = refresh_state(sub, lam, mu)
        gl = grad_lambda(sub, state)
        hessian = hessian_lambda(sub, state)
        grad_error = max(grad_error, _relative(_central(lambda x: dual_value(sub, x, mu), lam), gl))
        mu_error = max(
            mu_error, _relative(_central(lambda x: dual_value(sub, lam, x), mu), grad_mu(sub, state))
        )
        differenced = _central(lambda x: grad_lambda(sub, refresh_state(sub, x, mu)), lam)
        hessian_error = max(hessian_error, _relative(differenced, hessian))
        asymmetry = max(asymmetry, float(np.max(np.abs(hessian - hessian.T))))
        scale = max(1.0, float(np.max(np.abs(hessian))))
        curvature = max(curvature, -float(np.linalg.eigvalsh(hessian)[0]) / scale)
    return [
        PropertyCheck("grad_lambda", grad_error, GRADIENT_TOL),
        PropertyCheck("grad_mu", mu_error, GRADIENT_TOL),
        PropertyCheck("hessian_lambda", hessian_error, HESSIAN_TOL),
        PropertyCheck("hessian_symmetry", asymmetry, 1e-10),
        PropertyCheck("hessian_psd", curvature, 1e-8),
    ]


def verify_seed(
    config: NetworkConfig,
    power_model: PowerModel,
    draws: int = 5,
) -> VerificationReport:
    """Property checks of the channel model, the rate bound and the dual derivatives on one seed"""
    instance = generate_instance(config, power_model)
    rng = _rng(config.rng_seed)
    checks = [candidate_symmetry(instance)]
    checks.extend(rate_lower_bound(instance, rng, draws))

    users = tuple(range(instance.num_users))
    receivers: ReceiverState = update_receivers(instance, init_precoders(instance, users), users)
    sub = build_wpm_subproblem(instance, users, instance.eta, receivers)
    checks.extend(dual_derivatives(sub, rng, draws))

    report = VerificationReport(seed=config.rng_seed, checks=tuple(checks))
    if report.passed:
        log_info(logger, f"All {len(checks)} property checks passed for seed {config.rng_seed}")
    else:
        log_warning(logger, f"Property checks failed for seed {config.rng_seed}: {report.failures()}")
    return report
