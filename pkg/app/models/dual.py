from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Tuple

import numpy as np

from app.models.network import NetworkInstance
from app.models.precoding import PrecoderSet, ReceiverState

Pair = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class WpmSubproblem:
    """Weighted power minimization for fixed receivers and weights.

    Per user k the unknown is the big precoder V_k over its serving RRHs.
    Pair-indexed matrices use (j, k) = (precoder owner, constrained user).
    """

    instance: NetworkInstance
    receivers: ReceiverState
    users: Tuple[int, ...]
    serving: Mapping[int, Tuple[int, ...]]
    rrh_weights: np.ndarray
    gains: Mapping[int, np.ndarray]
    slices: Mapping[int, Mapping[int, slice]]
    h_tilde: Mapping[Pair, np.ndarray]
    h_breve: Mapping[Pair, np.ndarray]
    h_hat: Mapping[Pair, np.ndarray]
    constants: np.ndarray
    p_max: np.ndarray
    rate_min: float

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_rrhs(self) -> int:
        return self.p_max.size

    def position(self, k: int) -> int:
        return self.users.index(k)

    def users_of(self, i: int) -> List[int]:
        """Users whose precoders include a block of RRH i"""
        return [k for k in self.users if i in self.slices[k]]

    def selection(self, i: int, k: int) -> np.ndarray:
        """Diagonal of B_{i,k}"""
        mask = np.zeros(self.gains[k].size)
        if i in self.slices[k]:
            mask[self.slices[k][i]] = 1.0
        return mask


@dataclass(frozen=True, eq=False)
class DualState:
    """Multipliers plus every matrix that depends on them"""

    owner: WpmSubproblem
    lam: np.ndarray
    mu: np.ndarray
    g_tilde: Mapping[int, np.ndarray]
    C: Mapping[int, np.ndarray]
    F: Mapping[int, np.ndarray]
    D: Mapping[int, np.ndarray]
    Y: Mapping[Pair, np.ndarray]
    Y_tilde: Mapping[Pair, np.ndarray]
    Z: Mapping[Pair, np.ndarray]
    value: float

    def to_dict(self) -> Dict[str, object]:
        return {"lambda": self.lam.tolist(), "mu": self.mu.tolist(), "f": self.value}


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    rate_slackness: float
    power_slackness: float
    rate_violation: float
    power_violation: float
    primal_objective: float
    dual_objective: float

    @property
    def max_residual(self) -> float:
        return max(
            self.stationarity,
            self.rate_slackness,
            self.power_slackness,
            self.rate_violation,
            self.power_violation,
        )

    @property
    def duality_gap(self) -> float:
        return self.primal_objective - self.dual_objective

    def to_dict(self) -> Dict[str, float]:
        return {
            "stationarity": self.stationarity,
            "rate_slackness": self.rate_slackness,
            "power_slackness": self.power_slackness,
            "rate_violation": self.rate_violation,
            "power_violation": self.power_violation,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
        }


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    decrement: float
    values: Tuple[float, ...] = ()
    steps: Tuple[float, ...] = ()


@dataclass(frozen=True)
class BcdResult:
    precoders: PrecoderSet
    state: DualState
    kkt: KktReport
    converged: bool
    iterations: int
    values: Tuple[float, ...] = ()
    newton_iterations: Tuple[int, ...] = ()
    gradient_iterations: Tuple[int, ...] = ()
    debug_records: List[Dict[str, object]] = field(default_factory=list)
