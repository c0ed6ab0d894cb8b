from dataclasses import dataclass
from enum import Enum
from typing import Dict, Mapping, Tuple

from app.models.network import NpcBreakdown
from app.models.precoding import PrecoderSet


class BaselineMethod(str, Enum):
    FULL_COOPERATION = "full_coop"
    SUCCESSIVE_SELECTION = "successive"
    GREEDY_SEARCH = "greedy"
    EXHAUSTIVE_SEARCH = "exhaustive"


@dataclass(frozen=True)
class BaselineReport:
    method: BaselineMethod
    active_set: Tuple[int, ...]
    precoders: PrecoderSet
    npc: NpcBreakdown
    rates: Mapping[int, float]
    feasibility_checks: int
    wall_clock: float = 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "method": self.method.value,
            "active_set": list(self.active_set),
            "rates": {str(k): r for k, r in sorted(self.rates.items())},
            "npc": self.npc.to_dict(),
            "feasibility_checks": self.feasibility_checks,
        }
