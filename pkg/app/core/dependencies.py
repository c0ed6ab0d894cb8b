import logging
from functools import lru_cache

from app.core.config import SolverOptions
from app.core.logging import log_debug
from app.core.sink import ResultSink, result_sink
from app.services.simulation_manager import SimulationManager

logger = logging.getLogger(__name__)


@lru_cache()
def get_result_sink() -> ResultSink:
    """Get ResultSink instance (singleton)"""
    return result_sink


@lru_cache()
def get_simulation_manager() -> SimulationManager:
    """Get SimulationManager instance (singleton)"""
    log_debug(logger, "Creating SimulationManager instance")
    return SimulationManager(get_result_sink(), SolverOptions.from_settings())


async def simulation_manager_dependency() -> SimulationManager:
    """FastAPI dependency for SimulationManager"""
    return get_simulation_manager()
