from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

PerRrh = Union[float, List[float]]


class NetworkConfig(BaseModel):
    """Geometry and dimensioning of one simulated C-RAN"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_rrhs: int = Field(default=12, ge=1)
    num_users: int = Field(default=8, ge=1)
    tx_antennas: int = Field(default=2, ge=1)
    rx_antennas: int = Field(default=2, ge=1)
    streams: Optional[int] = Field(default=None, ge=1)
    candidate_size: int = Field(default=3, ge=1)
    region_half_width: float = Field(default=1000.0, gt=0)
    rate_min: float = Field(default=2.0, ge=0)
    noise_dbm: float = -104.0
    rng_seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def check_dimensions(self) -> "NetworkConfig":
        if self.streams is not None and self.streams > min(self.tx_antennas, self.rx_antennas):
            raise ValueError("streams must not exceed min(tx_antennas, rx_antennas)")
        if self.candidate_size > self.num_rrhs:
            raise ValueError("candidate_size must not exceed num_rrhs")
        return self

    @property
    def num_streams(self) -> int:
        if self.streams is None:
            return min(self.tx_antennas, self.rx_antennas)
        return self.streams

    @property
    def noise_power(self) -> float:
        """Thermal noise in W"""
        return float(10.0 ** ((self.noise_dbm - 30.0) / 10.0))


class PowerModel(BaseModel):
    """Amplifier, fronthaul, circuit and sleep power parameters"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eta: PerRrh = 4.0
    rho: PerRrh = 0.5
    p_active_rrh: float = Field(default=3.4, ge=0)
    p_sleep_rrh: float = Field(default=2.15, ge=0)
    p_active_fr: float = Field(default=3.85, ge=0)
    p_sleep_fr: float = Field(default=0.75, ge=0)
    p_bbu: float = Field(default=20.0, ge=0)
    p_max: PerRrh = 4.0

    @model_validator(mode="after")
    def check_powers(self) -> "PowerModel":
        if np.any(np.asarray(self.eta, dtype=float) <= 1.0):
            raise ValueError("eta must be greater than 1")
        if np.any(np.asarray(self.rho, dtype=float) < 0.0):
            raise ValueError("rho must be nonnegative")
        if np.any(np.asarray(self.p_max, dtype=float) <= 0.0):
            raise ValueError("p_max must be positive")
        if self.p_active_rrh < self.p_sleep_rrh:
            raise ValueError("p_active_rrh must be at least p_sleep_rrh")
        if self.p_active_fr < self.p_sleep_fr:
            raise ValueError("p_active_fr must be at least p_sleep_fr")
        return self

    def per_rrh(self, name: str, num_rrhs: int) -> np.ndarray:
        """Broadcast a scalar or per-RRH field to length num_rrhs"""
        values = np.asarray(getattr(self, name), dtype=float)
        if values.ndim == 0:
            return np.full(num_rrhs, float(values))
        if values.shape != (num_rrhs,):
            raise ValueError(f"{name} needs {num_rrhs} entries, got {values.shape[0]}")
        return values

    def circuit_power(self, tx_antennas: int) -> float:
        """Extra power of an active RRH and its fronthaul link over sleep mode"""
        return tx_antennas * (self.p_active_rrh - self.p_sleep_rrh) + (
            self.p_active_fr - self.p_sleep_fr
        )

    def sleep_power(self, tx_antennas: int) -> float:
        return tx_antennas * self.p_sleep_rrh + self.p_sleep_fr


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """One channel realization; immutable after generation"""

    config: NetworkConfig
    power_model: PowerModel
    rrh_positions: np.ndarray
    user_positions: np.ndarray
    channels: np.ndarray  # (I, K, N, M) complex
    noise_powers: np.ndarray
    candidate_rrhs: Tuple[Tuple[int, ...], ...]

    @property
    def num_rrhs(self) -> int:
        return self.channels.shape[0]

    @property
    def num_users(self) -> int:
        return self.channels.shape[1]

    @property
    def rx_antennas(self) -> int:
        return self.channels.shape[2]

    @property
    def tx_antennas(self) -> int:
        return self.channels.shape[3]

    @property
    def streams(self) -> int:
        return self.config.num_streams

    @property
    def rate_min(self) -> float:
        return self.config.rate_min

    @cached_property
    def candidate_users(self) -> Tuple[Tuple[int, ...], ...]:
        served: List[List[int]] = [[] for _ in range(self.num_rrhs)]
        for k, rrhs in enumerate(self.candidate_rrhs):
            for i in rrhs:
                served[i].append(k)
        return tuple(tuple(users) for users in served)

    @cached_property
    def eta(self) -> np.ndarray:
        return self.power_model.per_rrh("eta", self.num_rrhs)

    @cached_property
    def rho(self) -> np.ndarray:
        return self.power_model.per_rrh("rho", self.num_rrhs)

    @cached_property
    def p_max(self) -> np.ndarray:
        return self.power_model.per_rrh("p_max", self.num_rrhs)

    @property
    def circuit_power(self) -> float:
        return self.power_model.circuit_power(self.tx_antennas)

    @property
    def sleep_power(self) -> float:
        return self.power_model.sleep_power(self.tx_antennas)

    def channel(self, i: int, k: int) -> np.ndarray:
        return self.channels[i, k]

    def cluster_rrhs(self, users: Tuple[int, ...]) -> Tuple[int, ...]:
        """Union of the candidate sets of the given users"""
        return tuple(sorted({i for k in users for i in self.candidate_rrhs[k]}))


@dataclass(frozen=True)
class NpcBreakdown:
    """Network power consumption split into its components (W)"""

    transmit_power_total: float
    amplifier_power: float
    fronthaul_rate_power: float
    active_circuit_power: float
    sleep_power: float
    bbu_power: float
    objective_value: float
    full_npc: float
    active_set: Tuple[int, ...]
    transmit_powers: Dict[int, float] = field(default_factory=dict)

    @property
    def active_count(self) -> int:
        return len(self.active_set)

    def to_dict(self) -> Dict[str, object]:
        return {
            "transmit_power_total": self.transmit_power_total,
            "amplifier_power": self.amplifier_power,
            "fronthaul_rate_power": self.fronthaul_rate_power,
            "active_circuit_power": self.active_circuit_power,
            "sleep_power": self.sleep_power,
            "bbu_power": self.bbu_power,
            "objective_value": self.objective_value,
            "full_npc": self.full_npc,
            "active_set": list(self.active_set),
            "transmit_powers": {str(i): p for i, p in sorted(self.transmit_powers.items())},
        }


@dataclass(frozen=True)
class SelectionResult:
    """Achieved per-user rates and per-RRH transmit powers of one precoder set"""

    rates: Dict[int, float]
    powers: Dict[int, float]

    @property
    def min_rate(self) -> float:
        return min(self.rates.values()) if self.rates else float("inf")

    def to_dict(self) -> Dict[str, object]:
        return {
            "rates": {str(k): r for k, r in sorted(self.rates.items())},
            "powers": {str(i): p for i, p in sorted(self.powers.items())},
        }
