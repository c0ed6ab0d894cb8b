import logging
from typing import Any, Dict, List

from fastapi import APIRouter, Depends, HTTPException, status
from pydantic import BaseModel, Field, computed_field

from app.core.dependencies import simulation_manager_dependency
from app.core.logging import log_debug
from app.models.network import NetworkConfig, PowerModel
from app.services.network_model import instance_to_snapshot
from app.services.simulation_manager import SimulationManager

logger = logging.getLogger(__name__)
router = APIRouter()


class ConfigDocumentRequest(BaseModel):
    network: NetworkConfig = Field(default_factory=NetworkConfig, description="Network geometry")
    power: PowerModel = Field(default_factory=PowerModel, description="Power consumption model")


class InstanceResponse(BaseModel):
    candidate_rrhs: List[List[int]]
    snapshot: Dict[str, Any]

    @computed_field
    def num_users(self) -> int:
        return len(self.candidate_rrhs)

    @computed_field
    def num_rrhs(self) -> int:
        return len(self.snapshot["rrh_positions"])


@router.post("/", response_model=InstanceResponse, status_code=status.HTTP_201_CREATED)
def create_instance(
    document: ConfigDocumentRequest,
    simulation_manager: SimulationManager = Depends(simulation_manager_dependency),
):
    """Generate a channel realization and return its JSON snapshot"""
    log_debug(logger, f"POST /instances endpoint called for seed {document.network.rng_seed}")
    try:
        instance = simulation_manager.generate(document.network, document.power)
    except ValueError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return InstanceResponse(
        candidate_rrhs=[list(rrhs) for rrhs in instance.candidate_rrhs],
        snapshot=instance_to_snapshot(instance),
    )
