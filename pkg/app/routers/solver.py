import logging
from typing import Any, Dict, List, Optional

from fastapi import APIRouter, Depends, HTTPException, status
from pydantic import BaseModel, Field, computed_field

from app.core.dependencies import simulation_manager_dependency
from app.core.errors import InfeasibleError, NotConvergedError
from app.core.logging import log_debug
from app.models.admission import InitScheme, UserSelection
from app.models.baselines import BaselineMethod
from app.routers.instances import ConfigDocumentRequest
from app.services.simulation_manager import SimulationManager

logger = logging.getLogger(__name__)
router = APIRouter()


class Stage1Request(ConfigDocumentRequest):
    method: UserSelection = Field(UserSelection.USC, description="User selection strategy")
    scheme: InitScheme = Field(InitScheme.SVD, description="Precoder initialization")


class BaselineRequest(ConfigDocumentRequest):
    users: Optional[List[int]] = Field(None, description="Scheduled users; defaults to every user")


class AdmissionResponse(BaseModel):
    method: str
    admitted_users: List[int]
    alphas: Dict[str, float]
    removal_order: List[int]
    objective_trace: List[float]
    pass_traces: List[List[float]]
    evaluations: int

    @computed_field
    def admitted_count(self) -> int:
        return len(self.admitted_users)


class NpcResponse(BaseModel):
    transmit_power_total: float
    amplifier_power: float
    fronthaul_rate_power: float
    active_circuit_power: float
    sleep_power: float
    bbu_power: float
    objective_value: float
    full_npc: float
    active_set: List[int]
    transmit_powers: Dict[str, float]

    @computed_field
    def active_count(self) -> int:
        return len(self.active_set)


class SolveResponse(BaseModel):
    admission: AdmissionResponse
    active_set: List[int]
    rates: Dict[str, float]
    npc: NpcResponse
    rln: Dict[str, Any]
    feasibility_checks: int
    fallback_used: bool
    violations: List[str]

    @computed_field
    def feasible(self) -> bool:
        return not self.violations


class BaselineResponse(BaseModel):
    method: BaselineMethod
    active_set: List[int]
    rates: Dict[str, float]
    npc: NpcResponse
    feasibility_checks: int


def _http_error(e: Exception) -> HTTPException:
    if isinstance(e, ValueError):
        return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    if isinstance(e, InfeasibleError):
        return HTTPException(status_code=status.HTTP_409_CONFLICT, detail=str(e))
    return HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))


# API Endpoints
@router.post("/stage1", response_model=AdmissionResponse)
def run_stage1(
    request: Stage1Request,
    simulation_manager: SimulationManager = Depends(simulation_manager_dependency),
):
    """Stage-I user admission"""
    log_debug(logger, f"POST /stage1 endpoint called with method {request.method.value}")
    try:
        instance = simulation_manager.generate(request.network, request.power)
        result = simulation_manager.admit(instance, request.method, request.scheme)
    except (ValueError, InfeasibleError, NotConvergedError) as e:
        raise _http_error(e)
    return AdmissionResponse.model_validate(result.to_dict())


@router.post("/solve", response_model=SolveResponse)
def run_solve(
    request: Stage1Request,
    simulation_manager: SimulationManager = Depends(simulation_manager_dependency),
):
    """Stage-I admission followed by reweighted-l1 RRH selection"""
    log_debug(logger, "POST /solve endpoint called")
    try:
        instance = simulation_manager.generate(request.network, request.power)
        report = simulation_manager.solve(instance, request.method, request.scheme)
    except (ValueError, InfeasibleError, NotConvergedError) as e:
        raise _http_error(e)
    body = report.to_dict()
    return SolveResponse.model_validate(
        {
            "admission": body["admission"],
            "violations": body["violations"],
            **report.rln.to_dict(),
        }
    )


@router.post("/baselines/{method}", response_model=BaselineResponse)
def run_baseline_method(
    method: BaselineMethod,
    request: BaselineRequest,
    simulation_manager: SimulationManager = Depends(simulation_manager_dependency),
):
    """One RRH-selection comparison method"""
    log_debug(logger, f"POST /baselines/{method.value} endpoint called")
    try:
        instance = simulation_manager.generate(request.network, request.power)
        report = simulation_manager.baseline(instance, method, request.users)
    except (ValueError, InfeasibleError, NotConvergedError) as e:
        raise _http_error(e)
    return BaselineResponse.model_validate(report.to_dict())
