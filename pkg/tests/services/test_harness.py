import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from pydantic import ValidationError
from unittest.mock import Mock, patch

from app.core.errors import ConfigurationError, ContractViolationError, GuardViolationError, InfeasibleError
from app.models.admission import AdmissionResult, FeasibilityResult
from app.models.experiments import ExperimentMethod, ExperimentSpec, SweepAxis, TrialRecord, TrialStatus
from app.models.network import NetworkConfig, NpcBreakdown
from app.models.precoding import PrecoderSet
from app.models.sparse import SolverTiming
from app.services.harness import (
    aggregate,
    load_config_document,
    run_trial,
    spec_from_document,
    sweep,
    trial_instance,
    trial_seed,
)


def _npc(full: float, active=(0,)) -> NpcBreakdown:
    return NpcBreakdown(
        transmit_power_total=1.0,
        amplifier_power=4.0,
        fronthaul_rate_power=0.5,
        active_circuit_power=5.6,
        sleep_power=10.0,
        bbu_power=0.0,
        objective_value=full - 10.0,
        full_npc=full,
        active_set=tuple(active),
    )


def _record(method="rln", value=1.0, trial=0, status=TrialStatus.OK, full=20.0, admitted=(0, 1)) -> TrialRecord:
    return TrialRecord(
        trial=trial,
        seed=trial,
        sweep_axis="rate_min",
        sweep_value=value,
        method=method,
        status=status,
        admitted_users=admitted,
        active_rrhs=(0,) if status == TrialStatus.OK else (),
        npc=_npc(full) if status == TrialStatus.OK else None,
        feasibility_checks=2,
    )


@pytest.fixture
def spec() -> ExperimentSpec:
    return ExperimentSpec(
        network=NetworkConfig(num_rrhs=4, num_users=2, candidate_size=2, region_half_width=300.0),
        sweep_values=[0.5, 1.0],
        trials=2,
        methods=[ExperimentMethod.RLN, ExperimentMethod.FULL_COOPERATION],
        seed=7,
    )


@pytest.fixture
def admission() -> AdmissionResult:
    return AdmissionResult(admitted_users=(0, 1), alphas={0: 1.0, 1: 1.0}, precoders=PrecoderSet({}, (0, 1)), evaluations=3)


class TestConfigDocuments:

    def test_spec_from_document(self):
        spec = spec_from_document(
            {
                "network": {"num_rrhs": 5, "candidate_size": 2},
                "power": {"p_max": 2.0},
                "experiment": {"sweep_axis": "num_rrhs", "sweep_values": [3, 5], "trials": 4},
            }
        )

        assert spec.network.num_rrhs == 5
        assert spec.power.p_max == 2.0
        assert spec.sweep_axis == SweepAxis.NUM_RRHS
        assert spec.trials == 4

    def test_unknown_section(self):
        with pytest.raises(ConfigurationError, match="unknown configuration sections"):
            spec_from_document({"network": {}, "solver": {}})

    def test_not_an_object(self):
        with pytest.raises(ConfigurationError):
            spec_from_document([1, 2])

    def test_invalid_field(self):
        with pytest.raises(ConfigurationError, match="invalid configuration"):
            spec_from_document({"experiment": {"trials": 0}})

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"network": {"rate_min": 1.5}}))

        assert load_config_document(str(path)).network.rate_min == 1.5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read configuration"):
            load_config_document(str(tmp_path / "missing.json"))

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")

        with pytest.raises(ConfigurationError):
            load_config_document(str(path))


class TestExperimentSpec:

    def test_integer_axis_rejects_fraction(self):
        with pytest.raises(ValidationError):
            ExperimentSpec(sweep_axis=SweepAxis.NUM_RRHS, sweep_values=[4.5])

    def test_axis_value_must_fit_base_network(self):
        """Test a swept RRH count below the candidate set size"""
        with pytest.raises(ValidationError):
            ExperimentSpec(network=NetworkConfig(candidate_size=3), sweep_axis=SweepAxis.NUM_RRHS, sweep_values=[2])

    def test_per_rrh_power_length_checked(self):
        with pytest.raises(ValidationError):
            ExperimentSpec(network=NetworkConfig(num_rrhs=4), power={"p_max": [1.0, 2.0]})

    def test_config_for(self, spec):
        config = spec.config_for(1.25, 99)

        assert config.rate_min == 1.25
        assert config.rng_seed == 99
        assert config.num_rrhs == 4

    def test_trial_seed(self):
        assert trial_seed(7, 0) == 7
        assert trial_seed(7, 3) == 4

    def test_trial_instance_is_reproducible(self, spec):
        first = trial_instance(spec, 1.0, 1)
        second = trial_instance(spec, 1.0, 1)

        assert first.config.rng_seed == trial_seed(7, 1)
        assert (first.channels == second.channels).all()


class TestRunTrial:

    @patch("app.services.harness.run_baseline")
    @patch("app.services.harness.rln_solve")
    @patch("app.services.harness.select_users")
    def test_rows_per_method(self, mock_select, mock_rln, mock_baseline, spec, admission):
        """Test one row per method, failures become statuses"""
        mock_select.return_value = admission
        mock_rln.return_value = Mock(
            npc=_npc(30.0, (0, 2)), rates={0: 1.0, 1: 1.2}, state=Mock(iteration=3), wmmse_iterations=(4, 2, 1),
            feasibility_checks=1,
        )
        mock_baseline.side_effect = InfeasibleError("no subset")

        rows = run_trial(spec, 1.0, 0)

        assert [row.method for row in rows] == ["rln", "full_coop"]
        assert rows[0].status == TrialStatus.OK
        assert rows[0].active_rrhs == (0, 2)
        assert rows[0].iterations == {"stage1": 3, "rln": 3, "wmmse": 7}
        assert rows[1].status == TrialStatus.INFEASIBLE
        assert rows[1].message == "no subset"
        assert rows[1].admitted_users == (0, 1)
        mock_rln.assert_called_once()

    @patch("app.services.harness.select_users")
    def test_stage1_guard(self, mock_select, spec):
        mock_select.side_effect = GuardViolationError("too many users")

        rows = run_trial(spec, 1.0, 0)

        assert {row.status for row in rows} == {TrialStatus.GUARD}
        assert len(rows) == 2

    @patch("app.services.harness.rln_solve")
    @patch("app.services.harness.check_feasibility")
    def test_baseline_comparison_skips_infeasible_trials(self, mock_check, mock_rln, spec):
        mock_check.return_value = FeasibilityResult(feasible=False, witness=PrecoderSet({}, ()))
        comparison = spec.model_copy(update={"baseline_comparison": True})

        rows = run_trial(comparison, 1.0, 0)

        assert {row.status for row in rows} == {TrialStatus.SKIPPED}
        mock_rln.assert_not_called()

    @pytest.mark.slow
    def test_deterministic(self, spec):
        """Test a trial reproduces byte-identical records"""
        first = [row.to_dict() for row in run_trial(spec, 0.5, 1)]
        second = [row.to_dict() for row in run_trial(spec, 0.5, 1)]

        assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)


class TestTrialFailures:

    @pytest.mark.parametrize(
        "error",
        [ZeroDivisionError("float division by zero"), ContractViolationError("bad state"), FloatingPointError("overflow")],
    )
    @patch("app.services.harness.select_users")
    def test_stage1_errors_become_rows(self, mock_select, spec, error):
        """Test numerical and contract errors in Stage I do not escape the trial"""
        mock_select.side_effect = error

        rows = run_trial(spec, 1.0, 0)

        assert len(rows) == 2
        assert {row.status for row in rows} == {TrialStatus.NOT_CONVERGED}
        assert rows[0].message == str(error)

    @patch("app.services.harness.select_users")
    def test_stage1_infeasible_becomes_rows(self, mock_select, spec):
        mock_select.side_effect = InfeasibleError("nobody fits")

        rows = run_trial(spec, 1.0, 0)

        assert {row.status for row in rows} == {TrialStatus.INFEASIBLE}

    @patch("app.services.harness.run_baseline")
    @patch("app.services.harness.rln_solve")
    @patch("app.services.harness.select_users")
    def test_method_linalg_error_becomes_row(self, mock_select, mock_rln, mock_baseline, spec, admission):
        mock_select.return_value = admission
        mock_rln.side_effect = np.linalg.LinAlgError("not positive definite")
        mock_baseline.side_effect = ZeroDivisionError()

        rows = run_trial(spec, 1.0, 0)

        assert [row.status for row in rows] == [TrialStatus.NOT_CONVERGED, TrialStatus.NOT_CONVERGED]
        assert rows[1].message == "ZeroDivisionError"
        assert rows[0].admitted_users == (0, 1)

    @patch("app.services.harness.select_users")
    def test_sweep_survives_failing_trials(self, mock_select, sink, options):
        """Test a default-config sweep with a crashing solver still writes every row"""
        mock_select.side_effect = ZeroDivisionError("float division by zero")
        small = ExperimentSpec(sweep_values=[2.0], trials=3)

        result = sweep(small, options, sink)

        assert len(result.records) == 3
        assert {record.status for record in result.records} == {TrialStatus.NOT_CONVERGED}
        assert len((sink.root / "trials.jsonl").read_text().splitlines()) == 3


class TestFixedUserSet:

    @pytest.fixture
    def stream_spec(self) -> ExperimentSpec:
        return ExperimentSpec(
            network=NetworkConfig(
                num_rrhs=4, num_users=2, candidate_size=2, tx_antennas=2, rx_antennas=2, region_half_width=300.0
            ),
            sweep_axis=SweepAxis.STREAMS,
            sweep_values=[1, 2],
            trials=1,
            fixed_user_set=True,
            seed=5,
        )

    def test_rejects_other_axes(self):
        with pytest.raises(ValidationError, match="fixed_user_set"):
            ExperimentSpec(sweep_axis=SweepAxis.RATE_MIN, fixed_user_set=True)

    def test_rejects_baseline_comparison(self, stream_spec):
        with pytest.raises(ValidationError):
            ExperimentSpec(**{**stream_spec.model_dump(), "baseline_comparison": True})

    def test_reference_config_has_one_stream(self, stream_spec):
        config = stream_spec.reference_config(9)

        assert config.streams == 1
        assert config.rng_seed == 9
        assert config.tx_antennas == 2

    @patch("app.services.harness.rln_solve")
    @patch("app.services.harness.check_feasibility")
    @patch("app.services.harness.select_users")
    def test_users_come_from_reference_network(self, mock_select, mock_check, mock_rln, stream_spec, admission):
        """Test Stage I runs on the single-stream network and the set is reused"""
        mock_select.return_value = admission
        witness = PrecoderSet({}, (0, 1))
        mock_check.return_value = FeasibilityResult(feasible=True, witness=witness)
        mock_rln.return_value = Mock(
            npc=_npc(30.0), rates={0: 1.0, 1: 1.0}, state=Mock(iteration=1), wmmse_iterations=(1,), feasibility_checks=1
        )

        rows = run_trial(stream_spec, 2, 0)

        assert mock_select.call_args.args[0].streams == 1
        assert mock_check.call_args.args[0].streams == 2
        assert mock_check.call_args.args[1] == (0, 1)
        assert mock_rln.call_args.args[2] is witness
        assert rows[0].status == TrialStatus.OK
        assert rows[0].admitted_users == (0, 1)

    @patch("app.services.harness.rln_solve")
    @patch("app.services.harness.check_feasibility")
    @patch("app.services.harness.select_users")
    def test_unservable_fixed_set_is_infeasible(self, mock_select, mock_check, mock_rln, stream_spec, admission):
        mock_select.return_value = admission
        mock_check.return_value = FeasibilityResult(feasible=False, witness=PrecoderSet({}, (0, 1)))

        rows = run_trial(stream_spec, 2, 0)

        assert {row.status for row in rows} == {TrialStatus.INFEASIBLE}
        mock_rln.assert_not_called()


class TestSolverComparison:

    @patch("app.services.harness.rln_solve")
    @patch("app.services.harness.time_wpm_solvers")
    @patch("app.services.harness.select_users")
    def test_timing_attached_to_rows(self, mock_select, mock_time, mock_rln, spec, admission):
        mock_select.return_value = admission
        mock_time.return_value = SolverTiming(socp_seconds=2.0, bcd_seconds=0.5, socp_objective=1.0, bcd_objective=1.0)
        mock_rln.return_value = Mock(
            npc=_npc(30.0), rates={0: 1.0, 1: 1.0}, state=Mock(iteration=1), wmmse_iterations=(1,), feasibility_checks=1
        )
        timed = spec.model_copy(update={"compare_solvers": True, "methods": [ExperimentMethod.RLN]})

        (row,) = run_trial(timed, 1.0, 0)

        assert row.solver_timing.speedup == 4.0
        assert row.to_dict(True)["solver_timing"]["t_socp"] == 2.0
        assert "solver_timing" not in row.to_dict()

    @patch("app.services.harness.run_trial")
    def test_sweep_writes_one_timing_row_per_trial(self, mock_trial, spec, sink, options):
        timing = SolverTiming(socp_seconds=1.0, bcd_seconds=0.1, socp_objective=3.0, bcd_objective=3.0)
        mock_trial.side_effect = lambda s, value, trial, opts: [
            replace(_record(method=m.value, value=value, trial=trial), solver_timing=timing)
            for m in s.methods
        ]
        timed = spec.model_copy(update={"compare_solvers": True})

        sweep(timed, options, sink)

        lines = [json.loads(line) for line in (sink.root / "solver_timings.jsonl").read_text().splitlines()]
        assert len(lines) == 4
        assert set(lines[0]) == {"trial", "sweep_value", "t_socp", "t_bcd", "socp_objective", "bcd_objective"}


class TestAggregate:

    def test_mean_and_stderr(self):
        records = [_record(trial=t, full=full) for t, full in enumerate([10.0, 20.0, 30.0])]

        (row,) = aggregate(records)

        assert row["trials"] == 3
        assert row["ok_trials"] == 3
        assert row["full_npc_mean"] == pytest.approx(20.0)
        assert row["full_npc_stderr"] == pytest.approx(10.0 / math.sqrt(3.0))
        assert row["admitted_count_mean"] == 2.0
        assert row["feasibility_checks_stderr"] == 0.0

    def test_failed_rows_excluded(self):
        records = [_record(full=10.0), _record(trial=1, status=TrialStatus.INFEASIBLE)]

        (row,) = aggregate(records)

        assert row["trials"] == 2
        assert row["ok_trials"] == 1
        assert row["full_npc_mean"] == 10.0
        assert row["full_npc_stderr"] == 0.0

    def test_no_successful_rows(self):
        (row,) = aggregate([_record(status=TrialStatus.GUARD)])

        assert math.isnan(row["full_npc_mean"])

    def test_groups_sorted(self):
        records = [_record(method="rln", value=2.0), _record(method="full_coop", value=1.0), _record(value=1.0)]

        keys = [(row["sweep_value"], row["method"]) for row in aggregate(records)]

        assert keys == [(1.0, "full_coop"), (1.0, "rln"), (2.0, "rln")]


class TestSweep:

    @patch("app.services.harness.run_trial")
    def test_writes_result_files(self, mock_trial, spec, sink, options):
        mock_trial.side_effect = lambda s, value, trial, opts: [
            _record(method=m.value, value=value, trial=trial) for m in s.methods
        ]

        result = sweep(spec, options, sink)

        assert len(result.records) == 8
        assert mock_trial.call_count == 4
        lines = (sink.root / "trials.jsonl").read_text().splitlines()
        assert len(lines) == 8
        assert "wall_clock" not in json.loads(lines[0])
        with open(sink.root / "summary.csv", newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 4
        assert not (sink.root / "timings.jsonl").exists()

    @patch("app.services.harness.run_trial")
    def test_timing_file(self, mock_trial, spec, sink, options):
        mock_trial.side_effect = lambda s, value, trial, opts: [_record(value=value, trial=trial)]
        timed = spec.model_copy(update={"record_timing": True})

        result = sweep(timed, options, sink)

        assert len(result.files) == 3
        first = json.loads((sink.root / "timings.jsonl").read_text().splitlines()[0])
        assert set(first) == {"trial", "sweep_value", "method", "wall_clock"}


@pytest.mark.slow
class TestSweepProperties:

    def test_zero_rate_target_admits_everyone(self, spec):
        relaxed = spec.model_copy(update={"sweep_values": [0.0], "trials": 1})

        rows = run_trial(relaxed, 0.0, 0)

        assert all(row.admitted_users == (0, 1) for row in rows)

    def test_parallel_matches_serial(self, spec, tmp_path, options):
        from app.core.sink import result_sink

        small = spec.model_copy(update={"sweep_values": [0.5], "trials": 2})
        parallel = small.model_copy(update={"workers": 2})

        result_sink.initialize(str(tmp_path / "serial"))
        serial_rows = [record.to_dict() for record in sweep(small, options).records]
        result_sink.initialize(str(tmp_path / "parallel"))
        parallel_rows = [record.to_dict() for record in sweep(parallel, options).records]
        result_sink.close()

        assert serial_rows == parallel_rows
        assert (tmp_path / "serial" / "trials.jsonl").read_text() == (tmp_path / "parallel" / "trials.jsonl").read_text()
