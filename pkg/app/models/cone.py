from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple

import numpy as np


class ConeStatus(str, Enum):
    OPTIMAL = "Optimal"
    INACCURATE = "OptimalInaccurate"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True, eq=False)
class SocConstraint:
    """||A z + b|| <= c^T z + d; an A with zero rows is a linear inequality"""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float

    @property
    def size(self) -> int:
        return self.A.shape[0] + 1

    def slack(self, z: np.ndarray) -> float:
        return float(self.c @ z + self.d - np.linalg.norm(self.A @ z + self.b))

    @classmethod
    def linear(cls, c: np.ndarray, d: float) -> "SocConstraint":
        """0 <= c^T z + d"""
        return cls(A=np.zeros((0, c.shape[0])), b=np.zeros(0), c=np.asarray(c, dtype=float), d=d)


@dataclass(frozen=True, eq=False)
class ConeProgram:
    """min f^T z subject to a list of second-order cone constraints"""

    objective: np.ndarray
    constraints: List[SocConstraint] = field(default_factory=list)

    @property
    def num_variables(self) -> int:
        return self.objective.shape[0]

    def standard_form(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[int]]:
        """(c, G, h, dims) with G z + s = h and s in the product of cones"""
        if not self.constraints:
            return (
                self.objective,
                np.zeros((0, self.num_variables)),
                np.zeros(0),
                [],
            )
        rows = [np.vstack([-con.c[None, :], -con.A]) for con in self.constraints]
        offsets = [np.concatenate([[con.d], con.b]) for con in self.constraints]
        dims = [con.size for con in self.constraints]
        return self.objective, np.vstack(rows), np.concatenate(offsets), dims


@dataclass(frozen=True, eq=False)
class QuadraticTerms:
    """Separable quadratic sum_i q_i z_i^2 + l^T z + constant"""

    diagonal: np.ndarray
    linear: np.ndarray
    constant: float = 0.0

    def value(self, z: np.ndarray) -> float:
        return float(self.diagonal @ (z**2) + self.linear @ z + self.constant)


@dataclass(frozen=True, eq=False)
class ConeSolution:
    status: ConeStatus
    z: np.ndarray
    objective: float
    cone_duals: List[np.ndarray]
    kkt_residual: float
    iterations: int
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    gap: float = 0.0

    @property
    def is_optimal(self) -> bool:
        return self.status == ConeStatus.OPTIMAL

    @property
    def is_solved(self) -> bool:
        """Optimal, or stalled close enough to the optimum to use"""
        return self.status in (ConeStatus.OPTIMAL, ConeStatus.INACCURATE)
