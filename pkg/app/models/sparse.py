from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from app.models.admission import AdmissionResult
from app.models.network import NpcBreakdown
from app.models.precoding import PrecoderSet


@dataclass(frozen=True, eq=False)
class RlnWeights:
    """Reweighted-l1 weights: omega_i = eta_i + a_i * p_tilde_c_i"""

    weights: np.ndarray
    raw_weights: np.ndarray
    p_tilde_c: np.ndarray
    delta: float


@dataclass(frozen=True, eq=False)
class RlnState:
    weights: RlnWeights
    iteration: int
    npc_trace: Tuple[float, ...] = ()
    active_count_trace: Tuple[int, ...] = ()
    wpm_trace: Tuple[float, ...] = ()

    @property
    def delta(self) -> float:
        return self.weights.delta

    def to_dict(self) -> Dict[str, object]:
        return {
            "iteration": self.iteration,
            "delta": self.delta,
            "weights": self.weights.weights.tolist(),
            "raw_weights": self.weights.raw_weights.tolist(),
            "p_tilde_c": self.weights.p_tilde_c.tolist(),
            "npc_trace": list(self.npc_trace),
            "active_count_trace": list(self.active_count_trace),
            "wpm_trace": list(self.wpm_trace),
        }


@dataclass(frozen=True)
class WmmseResult:
    precoders: PrecoderSet
    objective_trace: Tuple[float, ...]
    iterations: int
    bcd_iterations: Tuple[int, ...] = ()
    bcd_converged: bool = True
    kkt_residual: float = 0.0
    restored_steps: int = 0
    debug_records: Tuple[Dict[str, object], ...] = ()


@dataclass(frozen=True)
class PowerMinimization:
    """Transmit-power-optimal precoders for one fixed active RRH set"""

    active_set: Tuple[int, ...]
    precoders: PrecoderSet
    rates: Mapping[int, float]
    npc: NpcBreakdown
    wmmse: WmmseResult


@dataclass(frozen=True)
class RlnResult:
    precoders: PrecoderSet
    npc: NpcBreakdown
    state: RlnState
    rates: Mapping[int, float]
    last_iterate: PrecoderSet
    feasibility_checks: int = 1
    fallback_used: bool = False
    wmmse_iterations: Tuple[int, ...] = field(default_factory=tuple)
    debug_records: Tuple[Dict[str, object], ...] = ()

    def to_dict(self) -> Dict[str, object]:
        return {
            "active_set": list(self.npc.active_set),
            "rates": {str(k): r for k, r in sorted(self.rates.items())},
            "npc": self.npc.to_dict(),
            "rln": self.state.to_dict(),
            "feasibility_checks": self.feasibility_checks,
            "fallback_used": self.fallback_used,
            "wmmse_iterations": list(self.wmmse_iterations),
        }


@dataclass(frozen=True)
class SolveReport:
    """Stage-I admission followed by Stage-II RRH selection"""

    admission: AdmissionResult
    rln: RlnResult
    violations: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, object]:
        return {
            "admission": self.admission.to_dict(),
            "stage2": self.rln.to_dict(),
            "violations": list(self.violations),
        }


@dataclass(frozen=True)
class SolverTiming:
    """Wall clock of one weighted power minimization solved two ways"""

    socp_seconds: float
    bcd_seconds: float
    socp_objective: float
    bcd_objective: float

    @property
    def speedup(self) -> float:
        return self.socp_seconds / self.bcd_seconds if self.bcd_seconds > 0 else float("inf")

    def to_dict(self) -> Dict[str, float]:
        return {
            "t_socp": self.socp_seconds,
            "t_bcd": self.bcd_seconds,
            "socp_objective": self.socp_objective,
            "bcd_objective": self.bcd_objective,
        }
