import logging
from dataclasses import replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.errors import ConfigurationError, ContractViolationError
from app.core.logging import log_debug, log_info
from app.models.network import NetworkConfig, NetworkInstance, NpcBreakdown, PowerModel, SelectionResult
from app.models.precoding import PrecoderSet
from app.services.mmse_core import received_covariance, signal_matrix

logger = logging.getLogger(__name__)

SHADOWING_STD_DB = 8.0
ANTENNA_GAIN_DBI = 9.0
MIN_DISTANCE_M = 1.0
SNAPSHOT_VERSION = 1


def pathloss_db(distance_m: np.ndarray) -> np.ndarray:
    """LTE macro path loss, distance in meters"""
    distance_km = np.maximum(np.asarray(distance_m, dtype=float), MIN_DISTANCE_M) / 1000.0
    return 148.1 + 37.6 * np.log10(distance_km)


def channel_gain_db(distance_m: np.ndarray, shadowing_db: np.ndarray) -> np.ndarray:
    return -pathloss_db(distance_m) + shadowing_db + ANTENNA_GAIN_DBI


def macro_positions(half_width: float) -> np.ndarray:
    """Centers of the eight neighbouring square cells"""
    side = 2.0 * half_width
    return np.array(
        [(dx * side, dy * side) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)],
        dtype=float,
    )


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def nearest_candidates(distances: np.ndarray, size: int) -> Tuple[Tuple[int, ...], ...]:
    """size nearest RRHs per user (columns of distances), ties to lower index"""
    order = np.argsort(distances, axis=0, kind="stable")
    return tuple(tuple(sorted(int(i) for i in order[:size, k])) for k in range(distances.shape[1]))


def generate_instance(config: NetworkConfig, power_model: PowerModel) -> NetworkInstance:
    """Draw one channel realization; deterministic in config.rng_seed"""
    num_rrhs, num_users = config.num_rrhs, config.num_users
    rx, tx = config.rx_antennas, config.tx_antennas
    try:
        p_max = power_model.per_rrh("p_max", num_rrhs)
        power_model.per_rrh("eta", num_rrhs)
        power_model.per_rrh("rho", num_rrhs)
    except ValueError as e:
        raise ConfigurationError(str(e)) from e

    rng = np.random.Generator(np.random.Philox(config.rng_seed))
    half_width = config.region_half_width
    rrh_positions = rng.uniform(-half_width, half_width, size=(num_rrhs, 2))
    user_positions = rng.uniform(-half_width, half_width, size=(num_users, 2))
    shadowing = SHADOWING_STD_DB * rng.standard_normal((num_rrhs, num_users))
    fading = rng.standard_normal((num_rrhs, num_users, rx, tx, 2))
    macro_shadowing = SHADOWING_STD_DB * rng.standard_normal((8, num_users))

    distances = _distances(rrh_positions, user_positions)
    amplitude = np.sqrt(10.0 ** (channel_gain_db(distances, shadowing) / 10.0))
    channels = amplitude[:, :, None, None] * (fading[..., 0] + 1j * fading[..., 1]) / np.sqrt(2.0)

    macro_distances = _distances(macro_positions(half_width), user_positions)
    macro_gain = 10.0 ** (channel_gain_db(macro_distances, macro_shadowing) / 10.0)
    noise_powers = config.noise_power + float(np.mean(p_max)) * macro_gain.sum(axis=0)

    instance = NetworkInstance(
        config=config,
        power_model=power_model,
        rrh_positions=rrh_positions,
        user_positions=user_positions,
        channels=channels,
        noise_powers=noise_powers,
        candidate_rrhs=nearest_candidates(distances, config.candidate_size),
    )
    log_debug(
        logger,
        f"Generated instance I={num_rrhs} K={num_users} seed={config.rng_seed}",
        seed=config.rng_seed,
    )
    return instance


def restrict_instance(instance: NetworkInstance, active_rrhs: Iterable[int]) -> NetworkInstance:
    """Same realization with every candidate set intersected with active_rrhs"""
    active = set(active_rrhs)
    return NetworkInstance(
        config=instance.config,
        power_model=instance.power_model,
        rrh_positions=instance.rrh_positions,
        user_positions=instance.user_positions,
        channels=instance.channels,
        noise_powers=instance.noise_powers,
        candidate_rrhs=tuple(
            tuple(i for i in rrhs if i in active) for rrhs in instance.candidate_rrhs
        ),
    )


def with_rate_target(instance: NetworkInstance, rate_min: float) -> NetworkInstance:
    """Same realization with another per-user rate target"""
    return replace(instance, config=instance.config.model_copy(update={"rate_min": float(rate_min)}))


def user_rate(
    instance: NetworkInstance, precoders: PrecoderSet, k: int, users: Sequence[int]
) -> float:
    """Achievable rate of user k in nats/s/Hz"""
    if k not in users:
        raise ContractViolationError(f"user {k} is not in the scheduled set")
    interference = received_covariance(instance, precoders, k, users, exclude=k)
    try:
        lower = linalg.cholesky(interference, lower=True)
    except linalg.LinAlgError as e:
        raise ContractViolationError(f"interference covariance of user {k} is singular") from e
    whitened = linalg.solve_triangular(lower, signal_matrix(instance, precoders, k), lower=True)
    gains = linalg.eigvalsh(whitened.conj().T @ whitened)
    return float(np.sum(np.log1p(np.clip(gains, 0.0, None))))


def user_rates(
    instance: NetworkInstance, precoders: PrecoderSet, users: Sequence[int]
) -> Dict[int, float]:
    return {k: user_rate(instance, precoders, k, users) for k in users}


def rates_and_powers(
    instance: NetworkInstance, precoders: PrecoderSet, users: Sequence[int]
) -> SelectionResult:
    powers = transmit_powers(precoders, instance.num_rrhs)
    return SelectionResult(
        rates=user_rates(instance, precoders, users),
        powers={i: float(powers[i]) for i in range(instance.num_rrhs)},
    )


def transmit_power(precoders: PrecoderSet, i: int) -> float:
    return precoders.transmit_power(i)


def transmit_powers(precoders: PrecoderSet, num_rrhs: int) -> np.ndarray:
    return np.array([precoders.transmit_power(i) for i in range(num_rrhs)])


def npc(
    instance: NetworkInstance,
    precoders: PrecoderSet,
    rates: Mapping[int, float],
    active_set: Iterable[int],
) -> NpcBreakdown:
    active = tuple(sorted(set(active_set)))
    powers = transmit_powers(precoders, instance.num_rrhs)
    inactive_power = [i for i in range(instance.num_rrhs) if i not in active and powers[i] > 0.0]
    if inactive_power:
        raise ContractViolationError(f"inactive RRHs {inactive_power} carry transmit power")

    fronthaul = 0.0
    for i in active:
        carried = [k for k in precoders.users if (i, k) in precoders.blocks]
        fronthaul += instance.rho[i] * sum(rates.get(k, 0.0) for k in carried)

    amplifier = float(sum(instance.eta[i] * powers[i] for i in active))
    circuit = len(active) * instance.circuit_power
    sleep = instance.num_rrhs * instance.sleep_power
    bbu = instance.power_model.p_bbu
    objective = amplifier + fronthaul + circuit
    return NpcBreakdown(
        transmit_power_total=float(powers.sum()),
        amplifier_power=amplifier,
        fronthaul_rate_power=float(fronthaul),
        active_circuit_power=float(circuit),
        sleep_power=float(sleep),
        bbu_power=float(bbu),
        objective_value=float(objective),
        full_npc=float(objective + sleep + bbu),
        active_set=active,
        transmit_powers={i: float(powers[i]) for i in active},
    )


def feasibility_violations(
    instance: NetworkInstance,
    precoders: PrecoderSet,
    users: Sequence[int],
    rate_tol: float = 1e-6,
    power_tol: float = 1e-8,
    rate_target: Optional[float] = None,
) -> List[str]:
    """Rate and power-cap violations, checked independently of any solver"""
    target = instance.rate_min if rate_target is None else rate_target
    problems: List[str] = []
    for k, rate in user_rates(instance, precoders, users).items():
        if rate < target - rate_tol:
            problems.append(f"user {k} rate {rate:.6g} below {target:.6g}")
    powers = transmit_powers(precoders, instance.num_rrhs)
    for i, power in enumerate(powers):
        if power > instance.p_max[i] * (1.0 + power_tol):
            problems.append(f"RRH {i} power {power:.6g} above cap {instance.p_max[i]:.6g}")
    return problems


def clip_to_power_caps(instance: NetworkInstance, precoders: PrecoderSet) -> PrecoderSet:
    """Scale down RRHs that exceed their cap by solver round-off"""
    factors: Dict[int, float] = {}
    for i in precoders.rrhs():
        power = precoders.transmit_power(i)
        if power > instance.p_max[i]:
            factors[i] = float(np.sqrt(instance.p_max[i] / power))
    return precoders.scaled(factors) if factors else precoders


def instance_to_snapshot(instance: NetworkInstance) -> Dict[str, object]:
    return {
        "version": SNAPSHOT_VERSION,
        "config": instance.config.model_dump(),
        "power_model": instance.power_model.model_dump(),
        "rrh_positions": instance.rrh_positions.tolist(),
        "user_positions": instance.user_positions.tolist(),
        "channels_real": np.real(instance.channels).tolist(),
        "channels_imag": np.imag(instance.channels).tolist(),
        "noise_powers": instance.noise_powers.tolist(),
        "candidate_rrhs": [list(rrhs) for rrhs in instance.candidate_rrhs],
    }


def instance_from_snapshot(document: Mapping[str, object]) -> NetworkInstance:
    if document.get("version") != SNAPSHOT_VERSION:
        raise ConfigurationError(f"unsupported snapshot version {document.get('version')}")
    try:
        instance = NetworkInstance(
            config=NetworkConfig.model_validate(document["config"]),
            power_model=PowerModel.model_validate(document["power_model"]),
            rrh_positions=np.asarray(document["rrh_positions"], dtype=float),
            user_positions=np.asarray(document["user_positions"], dtype=float),
            channels=np.asarray(document["channels_real"], dtype=float)
            + 1j * np.asarray(document["channels_imag"], dtype=float),
            noise_powers=np.asarray(document["noise_powers"], dtype=float),
            candidate_rrhs=tuple(tuple(int(i) for i in rrhs) for rrhs in document["candidate_rrhs"]),  # type: ignore[attr-defined]
        )
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"invalid instance snapshot: {e}") from e
    log_info(logger, f"Loaded instance snapshot with {instance.num_users} users")
    return instance
