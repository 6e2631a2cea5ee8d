import json

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from core.exceptions import DimensionMismatchError
from core.models import ObservationBatch
from services.gating import (
    AbstractionLibrary,
    EtaStats,
    FrozenAbstraction,
    calibrate_band,
    converged,
    eta_inst,
    freeze,
    is_degenerate,
    is_novel,
    update_eta_stats,
)
from services.incsfa import AdaptiveAbstraction
from services.stream_env import OscStreamParams, osc_sample


def sines(periods, n=100, start=0):
    t = np.arange(start, start + n)
    return np.column_stack([np.sin(2 * np.pi * t / p) for p in periods])


def train_on_stream(family, batches=40, tau=100):
    """Adaptive abstraction and its statistics after `batches` consecutive batches of one oscillator"""
    data = osc_sample(OscStreamParams(family), np.arange(batches * tau))
    adaptive = AdaptiveAbstraction(2, rng=np.random.default_rng(3))
    stats = EtaStats(2)
    blocks = [data[k * tau:(k + 1) * tau] for k in range(batches)]
    for block in blocks:
        adaptive.update_batch(block)
        update_eta_stats(stats, adaptive.output(block))
    return adaptive, stats, blocks


def held_out(family, start, count=100, tau=100):
    data = osc_sample(OscStreamParams(family), start + np.arange(count * tau))
    return [ObservationBatch(stream=0, samples=data[k * tau:(k + 1) * tau], start_time=start + k * tau)
            for k in range(count)]


def identity_abstraction(eta_mean, eta_sd):
    """Frozen abstraction whose outputs are the centered inputs"""
    eye = np.eye(2)
    return FrozenAbstraction(
        mean=np.zeros(2), components=eye, eigenvalues=np.ones(2), w=eye, composite=eye,
        eta_mean=np.asarray(eta_mean, dtype=float), eta_sd=np.asarray(eta_sd, dtype=float),
        header={"input_dim": 2, "output_dim": 2, "whitening_dim": 2}, provenance={"u": 1},
    )


class TestEtaInst:

    def test_sine_slowness(self):
        eta, degenerate = eta_inst(sines([20]))
        assert not degenerate[0]
        assert eta[0] == pytest.approx(np.sin(np.pi / 20) / np.pi, rel=0.03)

    @given(st.floats(min_value=1e-3, max_value=1e3), st.booleans())
    def test_scale_invariant(self, scale, negate):
        y = sines([20, 7])
        c = -scale if negate else scale
        np.testing.assert_allclose(eta_inst(c * y)[0], eta_inst(y)[0], rtol=1e-10)

    def test_constant_component_is_degenerate(self):
        y = np.column_stack([np.full(50, 3.0), np.sin(np.arange(50) / 5)])
        eta, degenerate = eta_inst(y)
        assert degenerate.tolist() == [True, False]
        assert np.isnan(eta[0])
        assert np.isfinite(eta[1])

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            eta_inst(np.zeros((1, 2)))


class TestEtaStats:

    def test_first_batch_initializes(self):
        y = sines([20, 40])
        stats = update_eta_stats(EtaStats(2), y)
        assert stats.batches == 1
        assert stats.eta_dot is None
        np.testing.assert_allclose(stats.mean_y, y.mean(axis=0))
        np.testing.assert_allclose(stats.eta, eta_inst(y)[0], rtol=0.05)
        np.testing.assert_array_equal(stats.inst_var, 0.0)

    def test_eta_dot_after_second_batch(self):
        stats = EtaStats(2)
        update_eta_stats(stats, sines([20, 40]))
        update_eta_stats(stats, sines([20, 40], start=100))
        assert stats.eta_dot is not None
        np.testing.assert_allclose(stats.eta_dot, stats.eta - stats.eta_prev)
        assert len(stats.recent_eta_dot) == 1

    def test_streaming_matches_two_pass(self):
        series = sines([40], n=10000)
        stats = EtaStats(1)
        for k in range(100):
            update_eta_stats(stats, series[k * 100:(k + 1) * 100])
        assert stats.eta[0] == pytest.approx(eta_inst(series)[0][0], rel=0.05)

    @pytest.mark.parametrize("family", ["x1", "x2", "x3"])
    def test_streaming_matches_two_pass_on_oscillators(self, family):
        series = osc_sample(OscStreamParams(family), np.arange(10000))
        stats = EtaStats(2)
        for k in range(100):
            update_eta_stats(stats, series[k * 100:(k + 1) * 100])
        np.testing.assert_allclose(stats.eta, eta_inst(series)[0], rtol=0.05)

    def test_restart_settling(self):
        stats = EtaStats(2, settle_batches=3)
        for k in range(3):
            update_eta_stats(stats, sines([20, 40], start=100 * k))
        eta = stats.eta.copy()
        stats.restart_settling()
        assert len(stats.recent_eta_dot) == 0
        np.testing.assert_array_equal(stats.eta, eta)
        assert not converged(stats, 1.0)

    def test_wrong_shape(self):
        with pytest.raises(DimensionMismatchError):
            update_eta_stats(EtaStats(2), np.zeros((10, 3)))

    def test_inst_band_tracks_spread(self):
        stats = EtaStats(1)
        rng = np.random.default_rng(0)
        for k in range(60):
            update_eta_stats(stats, sines([30], start=k * 100) + 0.05 * rng.standard_normal((100, 1)))
        assert stats.inst_sd[0] > 0
        assert stats.inst_mean[0] > 0


class TestConverged:

    def stats_with(self, eta_dots, degenerate=(False, False)):
        stats = EtaStats(2, settle_batches=3)
        stats.degenerate = np.array(degenerate)
        for d in eta_dots:
            stats.recent_eta_dot.append(np.array(d, dtype=float))
        return stats

    def test_settled(self):
        assert converged(self.stats_with([[1e-4, -2e-4]] * 3), 6e-4)

    def test_one_large_change(self):
        stats = self.stats_with([[1e-4, -2e-4], [1e-3, 0.0], [1e-4, 1e-4]])
        assert not converged(stats, 6e-4)

    def test_too_few_batches(self):
        assert not converged(self.stats_with([[0.0, 0.0]] * 2), 6e-4)

    def test_degenerate_component_ignored(self):
        stats = self.stats_with([[1e-4, np.nan]] * 3, degenerate=(False, True))
        assert converged(stats, 6e-4)

    def test_all_degenerate_never_converges(self):
        stats = self.stats_with([[np.nan, np.nan]] * 3, degenerate=(True, True))
        assert not converged(stats, 6e-4)


class TestFrozenAbstraction:

    def test_knows_its_band(self):
        batch = sines([25, 60])
        eta, _ = eta_inst(batch)
        phi = identity_abstraction(eta, [0.01, 0.01])
        assert phi.knows(batch)

    def test_noise_is_novel(self):
        batch = sines([25, 60])
        phi = identity_abstraction(eta_inst(batch)[0], [0.001, 0.001])
        noise = np.random.default_rng(1).uniform(-1, 1, (100, 2))
        assert not phi.knows(noise)

    def test_zero_batch_is_never_known(self):
        phi = identity_abstraction([0.0, 0.0], [1.0, 1.0])
        assert not phi.knows(np.zeros((50, 2)))

    def test_band(self):
        phi = identity_abstraction([0.1, 0.2], [0.01, 0.02])
        low, high = phi.band(2.0)
        np.testing.assert_allclose(low, [0.08, 0.16])
        np.testing.assert_allclose(high, [0.12, 0.24])

    def test_arrays_are_read_only(self):
        phi = identity_abstraction([0.1, 0.2], [0.01, 0.02])
        with pytest.raises(ValueError):
            phi.composite[0, 0] = 5.0

    def test_non_positive_sd_rejected(self):
        with pytest.raises(ValueError):
            identity_abstraction([0.1, 0.2], [0.0, 0.02])

    def test_output_dimension_check(self):
        phi = identity_abstraction([0.1, 0.2], [0.01, 0.02])
        with pytest.raises(DimensionMismatchError):
            phi.output(np.zeros((4, 3)))

    def test_dict_round_trip(self):
        phi = identity_abstraction([0.1, 0.2], [0.01, 0.02])
        clone = FrozenAbstraction.from_dict(phi.to_dict())
        np.testing.assert_array_equal(clone.composite, phi.composite)
        np.testing.assert_array_equal(clone.eta_sd, phi.eta_sd)
        assert clone.provenance == {"u": 1}
        assert "kind" not in clone.header


class TestFreeze:

    def test_snapshot_of_adaptive_abstraction(self, rng):
        data = sines([500, 23], n=2000) @ np.array([[1.0, 0.3], [0.5, 1.0]])
        adaptive = AdaptiveAbstraction(2, warmup=20, rng=rng)
        stats = EtaStats(2)
        for k in range(20):
            block = data[k * 100:(k + 1) * 100]
            adaptive.update_batch(block)
            update_eta_stats(stats, adaptive.output(block))

        phi = freeze(adaptive, stats, sd_floor=1e-6, provenance={"u": 1, "policy": [0, 1, 1]})
        np.testing.assert_allclose(phi.composite, adaptive.composite)
        np.testing.assert_allclose(phi.eta_mean, stats.inst_mean)
        assert np.all(phi.eta_sd >= 1e-6)
        assert phi.header["input_dim"] == 2
        assert phi.header["samples"] == 2000
        assert phi.provenance["policy"] == [0, 1, 1]

        adaptive.update_batch(data[:100])
        assert not np.allclose(phi.composite, adaptive.composite)

    def test_band_calibrated_on_recent_batches(self):
        adaptive, stats, blocks = train_on_stream("x1")
        phi = freeze(adaptive, stats, calibration=blocks[-20:])
        mean, sd = calibrate_band(adaptive.mean, adaptive.composite, blocks[-20:])
        np.testing.assert_allclose(phi.eta_mean, mean)
        np.testing.assert_allclose(phi.eta_sd, np.maximum(sd, 1e-6))
        assert phi.header["band"] == "calibrated"
        assert all(phi.knows(block) for block in blocks[-20:])

    def test_single_batch_falls_back_to_moving_band(self):
        adaptive, stats, blocks = train_on_stream("x2", batches=10)
        phi = freeze(adaptive, stats, calibration=blocks[-1:])
        assert phi.header["band"] == "moving"
        np.testing.assert_allclose(phi.eta_mean, stats.inst_mean)

    def test_sd_floor_ratio(self):
        adaptive, stats, blocks = train_on_stream("x3", batches=10)
        phi = freeze(adaptive, stats, calibration=blocks[-5:], sd_floor_ratio=0.5)
        assert np.all(phi.eta_sd >= 0.5 * np.abs(phi.eta_mean))

    def test_freeze_is_deterministic(self):
        adaptive, stats, blocks = train_on_stream("x1", batches=10)
        first = freeze(adaptive, stats, provenance={"u": 1}, calibration=blocks[-5:])
        second = freeze(adaptive, stats, provenance={"u": 1}, calibration=blocks[-5:])
        assert json.dumps(first.to_dict(), sort_keys=True) == json.dumps(second.to_dict(), sort_keys=True)


class TestCalibrateBand:

    def test_population_statistics(self):
        batches = [sines([20, 50]), sines([30, 50]), sines([40, 50])]
        etas = np.array([eta_inst(b)[0] for b in batches])
        mean, sd = calibrate_band(np.zeros(2), np.eye(2), batches)
        np.testing.assert_allclose(mean, etas.mean(axis=0))
        np.testing.assert_allclose(sd, etas.std(axis=0))

    def test_degenerate_component(self):
        batches = [np.column_stack([np.zeros(100), sines([p])[:, 0]]) for p in (20, 30)]
        mean, sd = calibrate_band(np.zeros(2), np.eye(2), batches)
        assert mean[0] == 0.0 and sd[0] == 0.0
        assert mean[1] > 0 and sd[1] > 0

    def test_needs_batches(self):
        with pytest.raises(ValueError):
            calibrate_band(np.zeros(2), np.eye(2), [])


class TestLibrary:

    def test_empty_library_finds_everything_novel(self):
        batch = ObservationBatch(stream=0, samples=sines([25, 60]), start_time=0)
        assert is_novel(batch, AbstractionLibrary())

    def test_known_batch_is_filtered(self):
        samples = sines([25, 60])
        library = AbstractionLibrary(band_width=2.0)
        library.append(identity_abstraction([0.5, 0.5], [0.001, 0.001]))
        library.append(identity_abstraction(eta_inst(samples)[0], [0.01, 0.01]))
        batch = ObservationBatch(stream=1, samples=samples, start_time=0)
        assert library.verdicts(samples) == [False, True]
        assert not is_novel(batch, library)
        assert len(library) == 2
        assert library[1].provenance["u"] == 1

    def test_encoded_stream_filtered_others_novel(self):
        adaptive, stats, blocks = train_on_stream("x1")
        library = AbstractionLibrary(band_width=2.0)
        library.append(freeze(adaptive, stats, calibration=blocks[-20:], sd_floor_ratio=0.02))
        known = sum(not is_novel(batch, library) for batch in held_out("x1", start=4000))
        assert known >= 95
        for family in ("x2", "x3"):
            novel = sum(is_novel(batch, library) for batch in held_out(family, start=4000))
            assert novel >= 95

    @given(st.lists(st.tuples(st.floats(0.0, 1.0), st.floats(1e-3, 0.5)), min_size=1, max_size=5),
           st.integers(min_value=1, max_value=400))
    def test_growing_library_only_removes_novelty(self, bands, start):
        batch = ObservationBatch(stream=0, samples=sines([25, 60], start=start), start_time=start)
        previous = True
        library = AbstractionLibrary()
        for mean, sd in bands:
            library.append(identity_abstraction([mean, mean], [sd, sd]))
            novel = is_novel(batch, library)
            assert previous or not novel
            previous = novel

    def test_is_degenerate(self):
        def batch(samples):
            return ObservationBatch(stream=0, samples=samples, start_time=0)

        assert is_degenerate(batch(np.zeros((100, 2))))
        assert is_degenerate(batch(np.full((100, 2), 4.0)))
        assert not is_degenerate(batch(sines([25, 60])))
        assert not is_degenerate(batch(np.column_stack([np.ones(100), sines([25])[:, 0]])))
