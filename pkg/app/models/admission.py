from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Tuple

import numpy as np

from app.models.precoding import PrecoderSet


class InitScheme(str, Enum):
    SVD = "svd"
    RAND = "rand"


class UserSelection(str, Enum):
    USC = "usc"
    GREEDY = "greedy"
    EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class Stage1Layout:
    """Where each unknown of the Stage-I cone program lives in the variable vector"""

    users: Tuple[int, ...]
    serving: Mapping[int, Tuple[int, ...]]
    offsets: Mapping[int, int]
    alpha_index: Mapping[int, int]
    fixed_users: Tuple[int, ...]
    s_index: int
    num_variables: int
    tx_antennas: int
    streams: int

    def rows(self, k: int) -> int:
        return len(self.serving[k]) * self.tx_antennas

    def precoder_indices(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Indices of Re and Im parts of user k's big precoder, each rows x d"""
        size = self.rows(k) * self.streams
        start = self.offsets[k]
        shape = (self.rows(k), self.streams)
        real = np.arange(start, start + size).reshape(shape)
        return real, real + size

    def block_indices(self, i: int, k: int) -> np.ndarray:
        """Re and Im indices of the entries of block V_{i,k}"""
        position = self.serving[k].index(i)
        real, imag = self.precoder_indices(k)
        rows = slice(position * self.tx_antennas, (position + 1) * self.tx_antennas)
        return np.concatenate([real[rows].ravel(), imag[rows].ravel()])


@dataclass(frozen=True)
class AdmissionResult:
    admitted_users: Tuple[int, ...]
    alphas: Mapping[int, float]
    precoders: PrecoderSet
    removal_order: Tuple[int, ...] = ()
    objective_trace: Tuple[float, ...] = ()
    pass_traces: Tuple[Tuple[float, ...], ...] = ()
    method: str = UserSelection.USC.value
    evaluations: int = 1

    @property
    def all_admitted(self) -> bool:
        return set(self.admitted_users) == set(self.alphas)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else 0.0

    @property
    def total_power(self) -> float:
        return float(sum(np.sum(np.abs(v) ** 2) for v in self.precoders.blocks.values()))

    def to_dict(self) -> Dict[str, object]:
        return {
            "method": self.method,
            "admitted_users": list(self.admitted_users),
            "alphas": {str(k): a for k, a in sorted(self.alphas.items())},
            "removal_order": list(self.removal_order),
            "objective_trace": list(self.objective_trace),
            "pass_traces": [list(trace) for trace in self.pass_traces],
            "evaluations": self.evaluations,
        }


@dataclass(frozen=True)
class FeasibilityResult:
    """Outcome of a feasibility check; witness is only meaningful when feasible"""

    feasible: bool
    witness: PrecoderSet
    alphas: Mapping[int, float] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.feasible
