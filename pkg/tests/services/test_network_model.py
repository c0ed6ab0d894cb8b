from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from app.core.errors import ConfigurationError, ContractViolationError
from app.models.admission import InitScheme
from app.models.network import NetworkConfig, PowerModel
from app.models.precoding import PrecoderSet
from app.services.network_model import (
    channel_gain_db,
    clip_to_power_caps,
    feasibility_violations,
    generate_instance,
    instance_from_snapshot,
    instance_to_snapshot,
    macro_positions,
    nearest_candidates,
    npc,
    pathloss_db,
    rates_and_powers,
    restrict_instance,
    transmit_powers,
    user_rate,
)
from app.services.stage1_admission import init_precoders


def _single_block(i: int, k: int, power: float, antennas: int = 2) -> PrecoderSet:
    block = np.zeros((antennas, antennas), dtype=complex)
    block[0, 0] = np.sqrt(power)
    return PrecoderSet(blocks={(i, k): block}, users=(k,))


class TestChannelModel:

    def test_pathloss_reference_point(self):
        """Test path loss at 1 km"""
        assert pathloss_db(np.array(1000.0)) == pytest.approx(148.1)
        assert channel_gain_db(np.array(1000.0), np.array(0.0)) == pytest.approx(-139.1)

    def test_pathloss_grows_with_distance(self):
        """Test path loss is increasing and clamped near zero distance"""
        losses = pathloss_db(np.array([0.0, 1.0, 10.0, 100.0]))

        assert losses[0] == losses[1]
        assert np.all(np.diff(losses[1:]) > 0)

    def test_macro_positions(self):
        """Test the eight neighbouring cell centers"""
        centers = macro_positions(1000.0)

        assert centers.shape == (8, 2)
        assert [2000.0, 0.0] in centers.tolist()
        assert [0.0, 0.0] not in centers.tolist()

    def test_nearest_candidates_tie_break(self):
        """Test equal distances go to the lower RRH index"""
        distances = np.array([[1.0, 5.0], [1.0, 1.0], [2.0, 0.5]])

        assert nearest_candidates(distances, 2) == ((0, 1), (1, 2))


class TestGenerateInstance:

    def test_shapes_and_candidates(self, small_instance, network_config):
        """Test array shapes and candidate set sizes"""
        assert small_instance.channels.shape == (4, 3, 2, 2)
        assert small_instance.noise_powers.shape == (3,)
        assert all(len(rrhs) == network_config.candidate_size for rrhs in small_instance.candidate_rrhs)

    def test_candidate_views_agree(self, small_instance):
        """Test the RRH-side and user-side candidate views are consistent"""
        for k, rrhs in enumerate(small_instance.candidate_rrhs):
            for i in range(small_instance.num_rrhs):
                assert (i in rrhs) == (k in small_instance.candidate_users[i])

    def test_deterministic_in_seed(self, network_config, power_model):
        """Test the same seed reproduces the realization bit for bit"""
        first = generate_instance(network_config, power_model)
        second = generate_instance(network_config, power_model)
        other = generate_instance(network_config.model_copy(update={"rng_seed": 12}), power_model)

        assert np.array_equal(first.channels, second.channels)
        assert first.candidate_rrhs == second.candidate_rrhs
        assert not np.array_equal(first.channels, other.channels)

    def test_noise_includes_macro_interference(self, small_instance, network_config):
        """Test per-user noise exceeds the thermal floor"""
        assert np.all(small_instance.noise_powers > network_config.noise_power)

    def test_per_rrh_length_mismatch(self, network_config):
        """Test a per-RRH list of the wrong length is rejected"""
        with pytest.raises(ConfigurationError):
            generate_instance(network_config, PowerModel(p_max=[4.0, 4.0]))

    def test_per_rrh_broadcast(self, network_config):
        """Test per-RRH lists of the right length are used as given"""
        instance = generate_instance(network_config, PowerModel(p_max=[1.0, 2.0, 3.0, 4.0]))

        assert_allclose(instance.p_max, [1.0, 2.0, 3.0, 4.0])
        assert_allclose(instance.eta, np.full(4, 4.0))


class TestConfigValidation:

    def test_streams_bounded_by_antennas(self):
        """Test d <= min(M, N)"""
        with pytest.raises(ValidationError):
            NetworkConfig(tx_antennas=2, rx_antennas=1, streams=2)

    def test_candidate_size_bounded(self):
        """Test X <= I"""
        with pytest.raises(ValidationError):
            NetworkConfig(num_rrhs=2, candidate_size=3)

    def test_default_streams(self):
        """Test d defaults to min(M, N)"""
        assert NetworkConfig(tx_antennas=4, rx_antennas=2).num_streams == 2

    def test_noise_power_in_watts(self):
        """Test dBm conversion"""
        assert NetworkConfig(noise_dbm=30.0).noise_power == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "fields",
        [{"eta": 1.0}, {"rho": -0.1}, {"p_max": 0.0}, {"p_active_rrh": 1.0, "p_sleep_rrh": 2.0}],
    )
    def test_power_model_rejects(self, fields):
        """Test invalid power model parameters"""
        with pytest.raises(ValidationError):
            PowerModel(**fields)

    def test_circuit_and_sleep_power(self, power_model):
        """Test the per-RRH circuit and sleep constants for M = 2"""
        assert power_model.circuit_power(2) == pytest.approx(5.6)
        assert power_model.sleep_power(2) == pytest.approx(5.05)


class TestRatesAndPower:

    def test_single_user_rate_matches_log_det(self, toy_instance):
        """Test the rate of an interference-free user"""
        precoders = _single_block(0, 0, 2.0)
        channel = toy_instance.channels[0, 0]
        effective = channel @ precoders.block(0, 0)
        expected = np.linalg.slogdet(
            np.eye(2) + effective @ effective.conj().T / toy_instance.noise_powers[0]
        )[1]

        assert user_rate(toy_instance, precoders, 0, (0,)) == pytest.approx(expected, rel=1e-10)

    def test_rate_of_unscheduled_user(self, toy_instance):
        """Test asking for a user outside the scheduled set"""
        with pytest.raises(ContractViolationError):
            user_rate(toy_instance, _single_block(0, 0, 1.0), 1, (0,))

    def test_transmit_powers(self, toy_instance):
        """Test power per RRH is the squared Frobenius norm"""
        powers = transmit_powers(_single_block(1, 0, 3.0), toy_instance.num_rrhs)

        assert_allclose(powers, [0.0, 3.0])

    def test_npc_breakdown(self, toy_instance):
        """Test every NPC component for one active RRH"""
        breakdown = npc(toy_instance, _single_block(0, 0, 1.0), {0: 2.0}, (0,))

        assert breakdown.amplifier_power == pytest.approx(4.0)
        assert breakdown.fronthaul_rate_power == pytest.approx(1.0)
        assert breakdown.active_circuit_power == pytest.approx(5.6)
        assert breakdown.objective_value == pytest.approx(10.6)
        assert breakdown.sleep_power == pytest.approx(2 * 5.05)
        assert breakdown.full_npc == pytest.approx(10.6 + 10.1 + 20.0)
        assert breakdown.active_count == 1

    def test_npc_rejects_power_on_sleeping_rrh(self, toy_instance):
        """Test an inactive RRH may not carry power"""
        with pytest.raises(ContractViolationError):
            npc(toy_instance, _single_block(1, 0, 1.0), {0: 2.0}, (0,))

    def test_feasibility_violations(self, toy_instance):
        """Test rate and power-cap violations are both reported"""
        problems = feasibility_violations(toy_instance, _single_block(0, 0, 9.0), (0,), rate_target=100.0)

        assert any("rate" in problem for problem in problems)
        assert any("above cap" in problem for problem in problems)

    def test_clip_to_power_caps(self, toy_instance):
        """Test RRHs above their cap are scaled onto it"""
        clipped = clip_to_power_caps(toy_instance, _single_block(0, 0, 9.0))

        assert clipped.transmit_power(0) == pytest.approx(4.0)

    def test_rates_and_powers(self, toy_instance):
        """Test the combined report"""
        report = rates_and_powers(toy_instance, _single_block(0, 0, 1.0), (0,))

        assert set(report.rates) == {0}
        assert report.powers == {0: pytest.approx(1.0), 1: 0.0}
        assert report.min_rate == report.rates[0]


class TestSnapshots:

    def test_round_trip(self, small_instance):
        """Test a snapshot reproduces the realization"""
        restored = instance_from_snapshot(instance_to_snapshot(small_instance))

        assert np.array_equal(restored.channels, small_instance.channels)
        assert restored.candidate_rrhs == small_instance.candidate_rrhs
        assert restored.config == small_instance.config

    def test_unknown_version(self, small_instance):
        """Test snapshots from another schema version are refused"""
        document = {**instance_to_snapshot(small_instance), "version": 99}

        with pytest.raises(ConfigurationError, match="unsupported snapshot version"):
            instance_from_snapshot(document)

    def test_restrict_instance(self, small_instance):
        """Test candidate sets are intersected with the active RRHs"""
        restricted = restrict_instance(small_instance, (0,))

        for k, rrhs in enumerate(restricted.candidate_rrhs):
            assert rrhs == tuple(i for i in small_instance.candidate_rrhs[k] if i == 0)


def _two_user_scalar(make_scalar_instance):
    """One RRH serving two single-antenna users over unit channels"""
    base = make_scalar_instance()
    return replace(
        base,
        config=base.config.model_copy(update={"num_users": 2}),
        user_positions=np.zeros((2, 2)),
        channels=np.ones((1, 2, 1, 1), dtype=complex),
        noise_powers=np.ones(2),
        candidate_rrhs=((0,), (0,)),
    )


def _unitary(rng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


class TestRateProperties:

    def test_scalar_link(self, make_scalar_instance):
        """Test log(1 + 1) for a unit channel, precoder and noise"""
        precoders = PrecoderSet(blocks={(0, 0): np.ones((1, 1), dtype=complex)}, users=(0,))

        assert user_rate(make_scalar_instance(), precoders, 0, (0,)) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_silent_precoder(self, make_scalar_instance):
        precoders = PrecoderSet(blocks={(0, 0): np.zeros((1, 1), dtype=complex)}, users=(0,))

        assert user_rate(make_scalar_instance(), precoders, 0, (0,)) == pytest.approx(0.0, abs=1e-15)

    def test_scalar_interference(self, make_scalar_instance):
        """Test log(1 + 1 / (1 + 1)) with one unit interferer"""
        instance = _two_user_scalar(make_scalar_instance)
        precoders = PrecoderSet(
            blocks={(0, 0): np.ones((1, 1), dtype=complex), (0, 1): np.ones((1, 1), dtype=complex)}, users=(0, 1)
        )

        assert user_rate(instance, precoders, 0, (0, 1)) == pytest.approx(np.log(1.5), abs=1e-12)
        assert user_rate(instance, precoders, 1, (0, 1)) == pytest.approx(np.log(1.5), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariant_to_stream_rotation(self, make_toy_instance, seed):
        """Test V_k -> V_k Q leaves every rate unchanged for unitary Q"""
        instance = make_toy_instance(seed=seed)
        rng = np.random.Generator(np.random.Philox(seed))
        precoders = init_precoders(instance, (0, 1), InitScheme.RAND, rng)
        rotation = _unitary(rng, instance.streams)
        rotated = PrecoderSet(
            blocks={key: v @ rotation if key[1] == 0 else v for key, v in precoders.blocks.items()},
            users=precoders.users,
        )

        for k in (0, 1):
            before = user_rate(instance, precoders, k, (0, 1))
            after = user_rate(instance, rotated, k, (0, 1))
            assert abs(after - before) <= 1e-10 * abs(before)

    @pytest.mark.parametrize("seed", range(5))
    def test_removing_interferer_never_hurts(self, make_toy_instance, seed):
        """Test zeroing user 1's precoder cannot lower user 0's rate"""
        instance = make_toy_instance(seed=seed)
        precoders = init_precoders(instance, (0, 1), InitScheme.RAND, np.random.Generator(np.random.Philox(seed)))
        silenced = PrecoderSet(
            blocks={key: np.zeros_like(v) if key[1] == 1 else v for key, v in precoders.blocks.items()},
            users=precoders.users,
        )

        assert user_rate(instance, silenced, 0, (0, 1)) >= user_rate(instance, precoders, 0, (0, 1)) - 1e-12
