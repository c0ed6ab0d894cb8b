from typing import Any, Optional


class CranError(Exception):
    """Base class for every simulator error"""


class ConfigurationError(CranError, ValueError):
    """Invalid network, power model or experiment configuration"""


class GuardViolationError(CranError, ValueError):
    """Problem size exceeds what an enumerating method accepts"""


class ContractViolationError(CranError):
    """Internal precondition broken (missing block, stale cache, ...)"""


class InfeasibleError(CranError):
    """Rate targets cannot be met under the per-RRH power caps"""


class NotConvergedError(CranError):
    """Iteration budget exhausted before the stopping rule held"""

    def __init__(self, message: str, partial: Optional[Any] = None) -> None:
        super().__init__(message)
        self.partial = partial


class ConeSolverError(NotConvergedError):
    """Cone program solver stopped without an optimality or infeasibility verdict"""
