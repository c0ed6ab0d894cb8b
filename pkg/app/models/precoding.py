from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Tuple

import numpy as np

from app.core.errors import ContractViolationError

BlockKey = Tuple[int, int]


@dataclass(frozen=True)
class PrecoderSet:
    """Per-(RRH, user) precoding blocks V_{i,k}, each M x d"""

    blocks: Mapping[BlockKey, np.ndarray]
    users: Tuple[int, ...]

    def serving(self, k: int) -> Tuple[int, ...]:
        """RRHs holding a block for user k, ascending"""
        rrhs = tuple(sorted(i for (i, user) in self.blocks if user == k))
        if not rrhs and k in self.users:
            raise ContractViolationError(f"user {k} has no precoder blocks")
        return rrhs

    def block(self, i: int, k: int) -> np.ndarray:
        try:
            return self.blocks[(i, k)]
        except KeyError:
            raise ContractViolationError(f"missing precoder block for RRH {i}, user {k}")

    def stacked(self, k: int) -> np.ndarray:
        """Big precoder of user k: blocks stacked in ascending RRH order"""
        return np.vstack([self.block(i, k) for i in self.serving(k)])

    def rrhs(self) -> Tuple[int, ...]:
        return tuple(sorted({i for (i, _) in self.blocks}))

    def transmit_power(self, i: int) -> float:
        return float(
            sum(np.sum(np.abs(v) ** 2) for (rrh, _), v in self.blocks.items() if rrh == i)
        )

    def scaled(self, factors: Mapping[int, float]) -> "PrecoderSet":
        """Scale every block of RRH i by factors[i]"""
        return PrecoderSet(
            blocks={key: v * factors.get(key[0], 1.0) for key, v in self.blocks.items()},
            users=self.users,
        )

    def restricted(self, active_rrhs: Iterable[int]) -> "PrecoderSet":
        """Drop the blocks of RRHs outside active_rrhs"""
        keep = set(active_rrhs)
        return PrecoderSet(
            blocks={key: v for key, v in self.blocks.items() if key[0] in keep},
            users=self.users,
        )

    def without_user(self, k: int) -> "PrecoderSet":
        return PrecoderSet(
            blocks={key: v for key, v in self.blocks.items() if key[1] != k},
            users=tuple(u for u in self.users if u != k),
        )

    @classmethod
    def from_stacked(
        cls, stacked: Mapping[int, np.ndarray], serving: Mapping[int, Tuple[int, ...]], tx_antennas: int
    ) -> "PrecoderSet":
        """Split big precoders back into per-RRH blocks"""
        blocks: Dict[BlockKey, np.ndarray] = {}
        for k, v_bar in stacked.items():
            for position, i in enumerate(serving[k]):
                blocks[(i, k)] = v_bar[position * tx_antennas : (position + 1) * tx_antennas]
        return cls(blocks=blocks, users=tuple(sorted(stacked)))

    def to_dict(self) -> Dict[str, object]:
        return {
            "users": list(self.users),
            "blocks": [
                {
                    "rrh": i,
                    "user": k,
                    "real": np.real(v).tolist(),
                    "imag": np.imag(v).tolist(),
                }
                for (i, k), v in sorted(self.blocks.items())
            ],
        }

    @classmethod
    def from_dict(cls, document: Mapping[str, object]) -> "PrecoderSet":
        entries: List[Mapping[str, object]] = document["blocks"]  # type: ignore[assignment]
        blocks = {
            (int(entry["rrh"]), int(entry["user"])): np.asarray(entry["real"], dtype=float)  # type: ignore[arg-type]
            + 1j * np.asarray(entry["imag"], dtype=float)  # type: ignore[arg-type]
            for entry in entries
        }
        return cls(blocks=blocks, users=tuple(int(k) for k in document["users"]))  # type: ignore[attr-defined]


@dataclass(frozen=True)
class ReceiverState:
    """MMSE receive filters U_k (N x d) and weights W_k (d x d)"""

    filters: Mapping[int, np.ndarray]
    weights: Mapping[int, np.ndarray]

    def pair(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.filters[k], self.weights[k]
