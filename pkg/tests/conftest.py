import logging
import os
from typing import Callable

import numpy as np
import pytest

from app.core.config import SolverOptions
from app.core.sink import result_sink
from app.models.network import NetworkConfig, NetworkInstance, PowerModel
from app.services.network_model import generate_instance, nearest_candidates

# Test configuration
os.environ["DEBUG"] = "True"
os.environ["WORKERS"] = "1"


@pytest.fixture(autouse=True)
def reset_logging():
    """Reset logging configuration before each test."""
    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    logging.basicConfig(level=logging.INFO, force=True)


@pytest.fixture
def caplog_setup(caplog):
    """Setup logging capture with custom format"""
    caplog.set_level(logging.DEBUG)
    return caplog


@pytest.fixture
def options() -> SolverOptions:
    return SolverOptions()


@pytest.fixture
def power_model() -> PowerModel:
    return PowerModel()


@pytest.fixture
def network_config() -> NetworkConfig:
    """Small dense deployment: 4 RRHs, 3 users, 2 candidates each"""
    return NetworkConfig(
        num_rrhs=4,
        num_users=3,
        candidate_size=2,
        region_half_width=300.0,
        rate_min=1.0,
        rng_seed=11,
    )


@pytest.fixture
def small_instance(network_config, power_model) -> NetworkInstance:
    return generate_instance(network_config, power_model)


@pytest.fixture
def make_toy_instance() -> Callable[..., NetworkInstance]:
    """Unit-scale channels and unit noise, independent of the path loss model"""

    def factory(
        num_rrhs: int = 2,
        num_users: int = 2,
        candidate_size: int = 2,
        rate_min: float = 1.0,
        seed: int = 3,
        antennas: int = 2,
        p_max: float = 4.0,
    ) -> NetworkInstance:
        rng = np.random.Generator(np.random.Philox(seed))
        draw = rng.standard_normal((num_rrhs, num_users, antennas, antennas, 2))
        channels = (draw[..., 0] + 1j * draw[..., 1]) / np.sqrt(2.0)
        rrh_positions = rng.uniform(-1.0, 1.0, (num_rrhs, 2))
        user_positions = rng.uniform(-1.0, 1.0, (num_users, 2))
        distances = np.linalg.norm(rrh_positions[:, None, :] - user_positions[None, :, :], axis=-1)
        config = NetworkConfig(
            num_rrhs=num_rrhs,
            num_users=num_users,
            tx_antennas=antennas,
            rx_antennas=antennas,
            candidate_size=candidate_size,
            rate_min=rate_min,
            rng_seed=seed,
        )
        return NetworkInstance(
            config=config,
            power_model=PowerModel(p_max=p_max),
            rrh_positions=rrh_positions,
            user_positions=user_positions,
            channels=channels,
            noise_powers=np.ones(num_users),
            candidate_rrhs=nearest_candidates(distances, candidate_size),
        )

    return factory


@pytest.fixture
def toy_instance(make_toy_instance) -> NetworkInstance:
    return make_toy_instance()


@pytest.fixture
def sink(tmp_path):
    """Result sink writing into a temporary directory"""
    result_sink.initialize(str(tmp_path))
    yield result_sink
    result_sink.close()


@pytest.fixture
def make_scalar_instance() -> Callable[..., NetworkInstance]:
    """One RRH, one user, single antennas and a unit channel"""

    def factory(rate_min: float = 1.0, p_max: float = 4.0, channel: complex = 1.0, noise: float = 1.0) -> NetworkInstance:
        config = NetworkConfig(
            num_rrhs=1, num_users=1, tx_antennas=1, rx_antennas=1, candidate_size=1, rate_min=rate_min
        )
        return NetworkInstance(
            config=config,
            power_model=PowerModel(p_max=p_max),
            rrh_positions=np.zeros((1, 2)),
            user_positions=np.zeros((1, 2)),
            channels=np.full((1, 1, 1, 1), channel, dtype=complex),
            noise_powers=np.array([noise]),
            candidate_rrhs=((0,),),
        )

    return factory
