"""Rate/MSE duality helpers shared by both stages.

All functions are pure: they read an immutable instance plus a precoder set
and return fresh arrays.
"""

import logging
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.errors import ContractViolationError
from app.core.logging import log_debug
from app.models.network import NetworkInstance
from app.models.precoding import PrecoderSet, ReceiverState

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-12


def stack_big_precoder(precoders: PrecoderSet, k: int) -> np.ndarray:
    return precoders.stacked(k)


def stacked_channel(instance: NetworkInstance, serving: Sequence[int], k: int) -> np.ndarray:
    """Channel from a serving set to user k, N x |serving|*M"""
    if not serving:
        return np.zeros((instance.rx_antennas, 0), dtype=complex)
    return np.hstack([instance.channels[i, k] for i in serving])


def hermitian_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh((matrix + matrix.conj().T) / 2)
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.conj().T


def regularized_inverse(matrix: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Inverse of a Hermitian PSD matrix, lifting eigenvalues below floor"""
    hermitian = (matrix + matrix.conj().T) / 2
    values, vectors = linalg.eigh(hermitian)
    if values[0] < floor:
        log_debug(logger, f"Regularizing near-singular matrix (min eigenvalue {values[0]:.3e})")
        hermitian = hermitian + floor * np.eye(hermitian.shape[0])
        values, vectors = linalg.eigh(hermitian)
    inverse = (vectors / values) @ vectors.conj().T
    return (inverse + inverse.conj().T) / 2


def received_covariance(
    instance: NetworkInstance,
    precoders: PrecoderSet,
    k: int,
    users: Iterable[int],
    exclude: Optional[int] = None,
) -> np.ndarray:
    """Sum of H_jk V_j V_j^H H_jk^H over users (minus `exclude`) plus noise"""
    covariance = instance.noise_powers[k] * np.eye(instance.rx_antennas, dtype=complex)
    for j in users:
        if j == exclude:
            continue
        effective = stacked_channel(instance, precoders.serving(j), k) @ precoders.stacked(j)
        covariance += effective @ effective.conj().T
    return covariance


def signal_matrix(instance: NetworkInstance, precoders: PrecoderSet, k: int) -> np.ndarray:
    """Effective channel H_kk V_k of user k's own streams, N x d"""
    return stacked_channel(instance, precoders.serving(k), k) @ precoders.stacked(k)


def mse_matrix(
    instance: NetworkInstance,
    precoders: PrecoderSet,
    receiver: np.ndarray,
    k: int,
    users: Iterable[int],
) -> np.ndarray:
    streams = receiver.shape[1]
    error = receiver.conj().T @ signal_matrix(instance, precoders, k) - np.eye(streams)
    mse = error @ error.conj().T
    mse += (
        receiver.conj().T
        @ received_covariance(instance, precoders, k, users, exclude=k)
        @ receiver
    )
    return (mse + mse.conj().T) / 2


def optimal_receiver_and_weight(
    instance: NetworkInstance, precoders: PrecoderSet, k: int, users: Iterable[int]
) -> Tuple[np.ndarray, np.ndarray]:
    covariance = received_covariance(instance, precoders, k, users)
    signal = signal_matrix(instance, precoders, k)
    factor = linalg.cho_factor(covariance)
    receiver = linalg.cho_solve(factor, signal)
    mse = np.eye(signal.shape[1]) - signal.conj().T @ receiver
    weight = regularized_inverse(mse)
    return receiver, weight


def h_lower_bound(
    instance: NetworkInstance,
    precoders: PrecoderSet,
    receiver: np.ndarray,
    weight: np.ndarray,
    k: int,
    users: Iterable[int],
) -> float:
    """Concave lower bound of user k's rate; tight at the optimal (U, W)"""
    values = linalg.eigvalsh((weight + weight.conj().T) / 2)
    if values[0] <= 0.0:
        raise ContractViolationError(f"weight matrix of user {k} is not positive definite")
    mse = mse_matrix(instance, precoders, receiver, k, users)
    return float(np.sum(np.log(values)) - np.real(np.trace(weight @ mse)) + weight.shape[0])


def update_receivers(
    instance: NetworkInstance, precoders: PrecoderSet, users: Sequence[int]
) -> ReceiverState:
    filters: Dict[int, np.ndarray] = {}
    weights: Dict[int, np.ndarray] = {}
    for k in users:
        filters[k], weights[k] = optimal_receiver_and_weight(instance, precoders, k, users)
    return ReceiverState(filters=filters, weights=weights)
