from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.models.admission import InitScheme, UserSelection
from app.models.network import NetworkConfig, NpcBreakdown, PowerModel
from app.models.sparse import SolverTiming

RECORD_SCHEMA_VERSION = 1

# sweeps whose user set can be pinned to the single-stream / single-antenna case
FIXED_SET_AXES = ("streams", "tx_antennas")


class SweepAxis(str, Enum):
    RATE_MIN = "rate_min"
    NUM_RRHS = "num_rrhs"
    TX_ANTENNAS = "tx_antennas"
    RX_ANTENNAS = "rx_antennas"
    STREAMS = "streams"
    CANDIDATE_SIZE = "candidate_size"


class ExperimentMethod(str, Enum):
    RLN = "rln"
    FULL_COOPERATION = "full_coop"
    SUCCESSIVE_SELECTION = "successive"
    GREEDY_SEARCH = "greedy"
    EXHAUSTIVE_SEARCH = "exhaustive"


class TrialStatus(str, Enum):
    OK = "ok"
    INFEASIBLE = "infeasible"
    NOT_CONVERGED = "not_converged"
    GUARD = "guard"
    SKIPPED = "skipped"


class ExperimentSpec(BaseModel):
    """Monte Carlo sweep over one network parameter"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    network: NetworkConfig = Field(default_factory=NetworkConfig)
    power: PowerModel = Field(default_factory=PowerModel)
    sweep_axis: SweepAxis = SweepAxis.RATE_MIN
    sweep_values: List[float] = Field(default_factory=lambda: [2.0], min_length=1)
    trials: int = Field(default=20, ge=1)
    methods: List[ExperimentMethod] = Field(default_factory=lambda: [ExperimentMethod.RLN], min_length=1)
    stage1_method: UserSelection = UserSelection.USC
    init_scheme: InitScheme = InitScheme.SVD
    seed: int = Field(default=0, ge=0, lt=2**63)
    output_dir: Optional[str] = None
    baseline_comparison: bool = False
    record_timing: bool = False
    workers: int = Field(default=1, ge=1)
    fixed_user_set: bool = False
    compare_solvers: bool = False

    @model_validator(mode="after")
    def check_sweep(self) -> "ExperimentSpec":
        for value in self.sweep_values:
            config = self.config_for(value, self.seed)
            for name in ("eta", "rho", "p_max"):
                self.power.per_rrh(name, config.num_rrhs)
        if self.fixed_user_set:
            if self.sweep_axis.value not in FIXED_SET_AXES:
                raise ValueError(f"fixed_user_set needs a sweep over one of {FIXED_SET_AXES}")
            if self.baseline_comparison:
                raise ValueError("fixed_user_set and baseline_comparison are exclusive")
            self.reference_config(self.seed)
        return self

    def config_for(self, value: float, seed: int) -> NetworkConfig:
        """Base network with the sweep axis set to value"""
        axis = self.sweep_axis.value
        if self.sweep_axis != SweepAxis.RATE_MIN:
            if float(value) != int(value):
                raise ValueError(f"{axis} takes integer values, got {value}")
            value = int(value)
        document = {**self.network.model_dump(), axis: value, "rng_seed": seed}
        try:
            return NetworkConfig.model_validate(document)
        except ValidationError as e:
            raise ValueError(f"{axis}={value} is invalid for the base network: {e}") from e

    def reference_config(self, seed: int) -> NetworkConfig:
        """Network whose admitted users are kept fixed across the sweep"""
        return self.config_for(1, seed)


@dataclass(frozen=True)
class TrialRecord:
    """One (trial, sweep value, method) outcome"""

    trial: int
    seed: int
    sweep_axis: str
    sweep_value: float
    method: str
    status: TrialStatus
    admitted_users: Tuple[int, ...] = ()
    active_rrhs: Tuple[int, ...] = ()
    npc: Optional[NpcBreakdown] = None
    rates: Dict[int, float] = field(default_factory=dict)
    iterations: Dict[str, int] = field(default_factory=dict)
    feasibility_checks: int = 0
    message: str = ""
    wall_clock: float = 0.0
    solver_timing: Optional[SolverTiming] = None

    @property
    def ok(self) -> bool:
        return self.status == TrialStatus.OK

    def to_dict(self, include_timing: bool = False) -> Dict[str, object]:
        record: Dict[str, object] = {
            "schema": RECORD_SCHEMA_VERSION,
            "trial": self.trial,
            "seed": self.seed,
            "sweep_axis": self.sweep_axis,
            "sweep_value": self.sweep_value,
            "method": self.method,
            "status": self.status.value,
            "admitted_users": list(self.admitted_users),
            "active_rrhs": list(self.active_rrhs),
            "npc": self.npc.to_dict() if self.npc else None,
            "rates": {str(k): r for k, r in sorted(self.rates.items())},
            "iterations": dict(sorted(self.iterations.items())),
            "feasibility_checks": self.feasibility_checks,
            "message": self.message,
        }
        if include_timing:
            record["wall_clock"] = self.wall_clock
            record["solver_timing"] = self.solver_timing.to_dict() if self.solver_timing else None
        return record


# aggregated per (sweep value, method); each gets a _mean and a _stderr column
METRICS: Tuple[str, ...] = (
    "admitted_count",
    "active_rrh_count",
    "full_npc",
    "transmit_power_total",
    "fronthaul_rate_power",
    "feasibility_checks",
)

SUMMARY_COLUMNS: Tuple[str, ...] = ("sweep_axis", "sweep_value", "method", "trials", "ok_trials") + tuple(
    f"{metric}_{suffix}" for metric in METRICS for suffix in ("mean", "stderr")
)


@dataclass(frozen=True)
class SweepResult:
    records: Tuple[TrialRecord, ...]
    summary: Tuple[Dict[str, object], ...]
    files: Tuple[str, ...] = ()
