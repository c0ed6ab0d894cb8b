import logging
from typing import Dict, List, Optional, Sequence

from app.core.config import SolverOptions
from app.core.errors import ConfigurationError, CranError
from app.core.logging import log_debug, log_error, log_info
from app.core.sink import ResultSink
from app.models.admission import AdmissionResult, InitScheme, UserSelection
from app.models.baselines import BaselineMethod, BaselineReport
from app.models.experiments import ExperimentSpec, SweepResult
from app.models.network import NetworkConfig, NetworkInstance, PowerModel
from app.models.sparse import SolveReport
from app.models.verification import VerificationReport
from app.services.baselines import run_baseline, verify_report
from app.services.harness import sweep
from app.services.network_model import feasibility_violations, generate_instance
from app.services.stage1_admission import select_users
from app.services.stage2_sparse import rln_solve
from app.services.verification import verify_seed

logger = logging.getLogger(__name__)


class SimulationManager:
    """Business logic layer between the CLI / HTTP surfaces and the solvers"""

    def __init__(self, sink: ResultSink, options: Optional[SolverOptions] = None) -> None:
        self.sink = sink
        self.options = options or SolverOptions.from_settings()
        log_debug(logger, "SimulationManager initialized")

    def generate(self, config: NetworkConfig, power_model: PowerModel) -> NetworkInstance:
        log_debug(logger, f"SimulationManager: Generating instance for seed {config.rng_seed}")
        try:
            return generate_instance(config, power_model)
        except CranError as e:
            log_error(logger, f"SimulationManager: Instance generation failed - {e}")
            raise
        except Exception as e:
            log_error(logger, f"SimulationManager: Unexpected error generating instance - {e}", exc_info=e)
            raise CranError("Failed to generate network instance") from e

    def admit(
        self,
        instance: NetworkInstance,
        method: UserSelection = UserSelection.USC,
        scheme: InitScheme = InitScheme.SVD,
    ) -> AdmissionResult:
        """Stage-I user admission"""
        log_info(logger, f"SimulationManager: Stage I with {method.value} selection and {scheme.value} start")
        try:
            result = select_users(instance, method, scheme, self.options)
            log_info(
                logger,
                f"SimulationManager: Admitted {len(result.admitted_users)} of {instance.num_users} users",
            )
            return result
        except CranError as e:
            log_error(logger, f"SimulationManager: Stage I failed - {e}")
            raise
        except Exception as e:
            log_error(logger, f"SimulationManager: Unexpected error during Stage I - {e}", exc_info=e)
            raise CranError("Failed to run user admission") from e

    def solve(
        self,
        instance: NetworkInstance,
        method: UserSelection = UserSelection.USC,
        scheme: InitScheme = InitScheme.SVD,
    ) -> SolveReport:
        """Stage I then Stage II, with an independent feasibility re-check"""
        admission = self.admit(instance, method, scheme)
        users = admission.admitted_users
        try:
            rln = rln_solve(instance, users, admission.precoders, options=self.options)
            violations = feasibility_violations(
                instance,
                rln.precoders,
                users,
                self.options.rate_tol,
                self.options.power_tol,
            )
            self._dump_debug("dual_debug.jsonl", rln.debug_records)
            log_info(
                logger,
                f"SimulationManager: Solved with {rln.npc.active_count} active RRHs, NPC {rln.npc.full_npc:.4f} W",
            )
            return SolveReport(admission=admission, rln=rln, violations=tuple(violations))
        except CranError as e:
            log_error(logger, f"SimulationManager: Stage II failed - {e}")
            raise
        except Exception as e:
            log_error(logger, f"SimulationManager: Unexpected error during Stage II - {e}", exc_info=e)
            raise CranError("Failed to run RRH selection") from e

    def baseline(
        self,
        instance: NetworkInstance,
        method: BaselineMethod,
        users: Optional[Sequence[int]] = None,
    ) -> BaselineReport:
        """One comparison method; users default to every user of the instance"""
        users = tuple(range(instance.num_users)) if users is None else tuple(users)
        unknown = [k for k in users if not 0 <= k < instance.num_users]
        if unknown:
            raise ConfigurationError(f"unknown users {unknown}")
        log_info(logger, f"SimulationManager: Running {method.value} for {len(users)} users")
        try:
            report = run_baseline(instance, users, method, self.options)
            problems = verify_report(instance, users, report, self.options)
            if problems:
                raise CranError(f"{method.value} returned infeasible precoders: {'; '.join(problems)}")
            return report
        except CranError as e:
            log_error(logger, f"SimulationManager: {method.value} failed - {e}")
            raise
        except Exception as e:
            log_error(logger, f"SimulationManager: Unexpected error in {method.value} - {e}", exc_info=e)
            raise CranError(f"Failed to run {method.value}") from e

    def verify(self, config: NetworkConfig, power_model: PowerModel) -> VerificationReport:
        log_info(logger, f"SimulationManager: Running property checks for seed {config.rng_seed}")
        try:
            return verify_seed(config, power_model)
        except CranError as e:
            log_error(logger, f"SimulationManager: Property checks failed to run - {e}")
            raise
        except Exception as e:
            log_error(logger, f"SimulationManager: Unexpected error during property checks - {e}", exc_info=e)
            raise CranError("Failed to run property checks") from e

    def run_sweep(self, spec: ExperimentSpec) -> SweepResult:
        log_info(logger, f"SimulationManager: Starting sweep over {spec.sweep_axis.value}")
        try:
            if spec.output_dir:
                self.sink.initialize(spec.output_dir)
            return sweep(spec, self.options, self.sink)
        except CranError as e:
            log_error(logger, f"SimulationManager: Sweep failed - {e}")
            raise
        except Exception as e:
            log_error(logger, f"SimulationManager: Unexpected error during sweep - {e}", exc_info=e)
            raise CranError("Failed to run sweep") from e

    def _dump_debug(self, name: str, records: Sequence[Dict[str, object]]) -> None:
        if not self.options.verbose or not records:
            return
        rows: List[Dict[str, object]] = list(records)
        path = self.sink.write_jsonl(name, rows)
        log_debug(logger, f"SimulationManager: Wrote {len(rows)} dual-solver records to {path}")
