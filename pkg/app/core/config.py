import os
from dataclasses import dataclass, replace
from typing import Any, Optional


def _env_float(name: str, default: str) -> float:
    return float(os.getenv(name, default))


def _env_int(name: str, default: str) -> int:
    return int(os.getenv(name, default))


class Settings:
    def __init__(self):
        self.app_name = "Green C-RAN Simulator"
        self.version = "1.0.0"
        self.debug = os.getenv("DEBUG", "false").lower() == "true"

    def log_level(self) -> str:
        return os.getenv("LOG_LEVEL", "DEBUG" if self.debug else "INFO").upper()

    def app_host(self) -> str:
        return os.getenv("APP_HOST", "0.0.0.0")

    def app_port(self) -> int:
        return _env_int("APP_PORT", "8000")

    def output_dir(self) -> str:
        return os.getenv("OUTPUT_DIR", "results")

    def workers(self) -> int:
        return _env_int("WORKERS", "1")

    def cone_tol(self) -> float:
        return _env_float("CONE_TOL", "1e-8")

    def cone_max_iter(self) -> int:
        return _env_int("CONE_MAX_ITER", "100")

    def admission_tol(self) -> float:
        return _env_float("ADMISSION_TOL", "1e-4")

    def stage1_n_max(self) -> int:
        return _env_int("STAGE1_N_MAX", "30")

    def stage1_decrease_tol(self) -> float:
        return _env_float("STAGE1_DECREASE_TOL", "1e-6")

    def rln_delta(self) -> float:
        return _env_float("RLN_DELTA", "1e-5")

    def rln_n_max(self) -> int:
        return _env_int("RLN_N_MAX", "10")

    def theta_off(self) -> float:
        return _env_float("THETA_OFF", "1e-4")

    def wmmse_l_max(self) -> int:
        return _env_int("WMMSE_L_MAX", "50")

    def wmmse_eps(self) -> float:
        return _env_float("WMMSE_EPS", "1e-3")

    def bcd_n_max(self) -> int:
        return _env_int("BCD_N_MAX", "30")

    def bcd_eps(self) -> float:
        return _env_float("BCD_EPS", "1e-3")

    def bcd_kkt_tol(self) -> float:
        return _env_float("BCD_KKT_TOL", "1e-4")

    def newton_t_max(self) -> int:
        return _env_int("NEWTON_T_MAX", "15")

    def grad_t_max(self) -> int:
        return _env_int("GRAD_T_MAX", "20")

    def armijo_xi(self) -> float:
        return _env_float("ARMIJO_XI", "0.01")

    def armijo_phi(self) -> float:
        return _env_float("ARMIJO_PHI", "0.5")


settings = Settings()


@dataclass(frozen=True)
class SolverOptions:
    """Numerical knobs shared by every solver layer"""

    cone_tol: float = 1e-8
    cone_max_iter: int = 100
    admission_tol: float = 1e-4
    stage1_n_max: int = 30
    stage1_decrease_tol: float = 1e-6
    rln_delta: float = 1e-5
    rln_n_max: int = 10
    theta_off: float = 1e-4
    wmmse_l_max: int = 50
    wmmse_eps: float = 1e-3
    bcd_n_max: int = 30
    bcd_eps: float = 1e-3
    bcd_kkt_tol: float = 1e-4
    newton_t_max: int = 15
    newton_tol: float = 1e-10
    grad_t_max: int = 20
    armijo_xi: float = 0.01
    armijo_phi: float = 0.5
    rate_tol: float = 1e-6
    power_tol: float = 1e-8
    dual_warm_start: bool = True
    workers: int = 1
    verbose: bool = False

    @classmethod
    def from_settings(cls, source: Optional[Settings] = None) -> "SolverOptions":
        source = source or settings
        return cls(
            cone_tol=source.cone_tol(),
            cone_max_iter=source.cone_max_iter(),
            admission_tol=source.admission_tol(),
            stage1_n_max=source.stage1_n_max(),
            stage1_decrease_tol=source.stage1_decrease_tol(),
            rln_delta=source.rln_delta(),
            rln_n_max=source.rln_n_max(),
            theta_off=source.theta_off(),
            wmmse_l_max=source.wmmse_l_max(),
            wmmse_eps=source.wmmse_eps(),
            bcd_n_max=source.bcd_n_max(),
            bcd_eps=source.bcd_eps(),
            bcd_kkt_tol=source.bcd_kkt_tol(),
            newton_t_max=source.newton_t_max(),
            grad_t_max=source.grad_t_max(),
            armijo_xi=source.armijo_xi(),
            armijo_phi=source.armijo_phi(),
            workers=source.workers(),
        )

    def updated(self, **changes: Any) -> "SolverOptions":
        return replace(self, **changes)
