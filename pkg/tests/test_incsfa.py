import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from core.exceptions import (
    DimensionMismatchError,
    InsufficientStatisticsError,
    NonFiniteInputError,
    SingularCovarianceError,
)
from services.gating import eta_inst
from services.incsfa import (
    AdaptiveAbstraction,
    WeightChangeTracker,
    batch_sfa_oracle,
    random_orthonormal_rows,
    window_means,
)


def mixed_sources(n=10000):
    """Linear mixture of a slow and a fast sine; returns (data, slow source)"""
    t = np.arange(n)
    slow = np.sin(2 * np.pi * t / 1000)
    fast = np.sin(2 * np.pi * t / 23)
    mixing = np.array([[1.0, 0.5], [0.3, 1.0]])
    return np.column_stack([slow, fast]) @ mixing.T, slow


def abs_corr(a, b):
    return abs(np.corrcoef(a, b)[0, 1])


@given(st.integers(min_value=1, max_value=4), st.integers(min_value=0, max_value=3), st.integers(0, 10 ** 6))
def test_random_orthonormal_rows(rows, extra, seed):
    m = random_orthonormal_rows(rows, rows + extra, np.random.default_rng(seed))
    assert m.shape == (rows, rows + extra)
    np.testing.assert_allclose(m @ m.T, np.eye(rows), atol=1e-10)


def test_random_orthonormal_rows_too_many():
    with pytest.raises(ValueError):
        random_orthonormal_rows(3, 2, np.random.default_rng(0))


class TestAdaptiveAbstraction:

    def test_xi_zero_during_warmup(self, rng):
        phi = AdaptiveAbstraction(2, warmup=20, rng=rng)
        data, _ = mixed_sources(40)
        xis = phi.update_batch(data)
        np.testing.assert_array_equal(xis[:20], 0.0)
        assert np.all(xis[20:] >= 0.0)
        assert xis[20:].sum() > 0

    def test_output_before_warmup(self, rng):
        phi = AdaptiveAbstraction(2, warmup=5, rng=rng)
        phi.update([1.0, 2.0])
        with pytest.raises(InsufficientStatisticsError):
            phi.output(np.zeros(2))

    def test_rejects_wrong_dimension(self, rng):
        phi = AdaptiveAbstraction(2, rng=rng)
        with pytest.raises(DimensionMismatchError):
            phi.update([1.0, 2.0, 3.0])

    def test_rejects_non_finite(self, rng):
        phi = AdaptiveAbstraction(2, rng=rng)
        with pytest.raises(NonFiniteInputError):
            phi.update([np.nan, 0.0])
        assert phi.n == 0

    def test_zero_stream_never_changes(self, rng):
        phi = AdaptiveAbstraction(2, warmup=10, rng=rng)
        xis = phi.update_batch(np.zeros((200, 2)))
        np.testing.assert_array_equal(xis, 0.0)
        np.testing.assert_array_equal(phi.composite, 0.0)
        np.testing.assert_array_equal(phi.output(np.zeros((5, 2))), 0.0)

    def test_invalid_output_dim(self):
        with pytest.raises(ValueError):
            AdaptiveAbstraction(2, output_dim=3)

    def test_whitening_dim_capped_by_input(self, rng):
        phi = AdaptiveAbstraction(3, output_dim=2, whitening_dim=8, rng=rng)
        assert phi.whitening_dim == 3
        assert phi.whitening.shape == (3, 3)

    def test_ccipca_leading_component(self, rng):
        data = rng.standard_normal((5000, 2)) * np.array([2.0, 1.0])
        phi = AdaptiveAbstraction(2, rng=rng)
        phi.update_batch(data)
        assert abs(phi.components[0] @ np.array([1.0, 0.0])) > 0.95
        assert phi.eigenvalues[0] > phi.eigenvalues[1]

    def test_begin_segment_skips_derivative(self, rng):
        phi = AdaptiveAbstraction(2, warmup=1, rng=rng)
        phi.update_batch(np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]))
        phi.begin_segment()
        assert phi._x_prev is None
        phi.update([0.2, 0.1])
        np.testing.assert_allclose(phi._x_prev, [0.2, 0.1])

    def test_learns_slow_source(self, rng):
        data, slow = mixed_sources()
        phi = AdaptiveAbstraction(2, rng=rng)
        phi.update_batch(data)
        y = phi.output(data[-2000:])
        assert abs_corr(y[:, 0], slow[-2000:]) > 0.95

    def test_serialization(self, rng):
        data, _ = mixed_sources(300)
        phi = AdaptiveAbstraction(2, rng=rng)
        phi.update_batch(data[:200])
        clone = AdaptiveAbstraction.from_dict(phi.to_dict())
        np.testing.assert_array_equal(phi.update_batch(data[200:]), clone.update_batch(data[200:]))
        np.testing.assert_array_equal(phi.composite, clone.composite)

    def test_whitening_of_known_covariance(self, rng):
        rotation = np.array([[np.cos(0.6), -np.sin(0.6)], [np.sin(0.6), np.cos(0.6)]])
        covariance = rotation @ np.diag([4.0, 1.0]) @ rotation.T
        data = rng.multivariate_normal([1.0, -2.0], covariance, size=20000)
        phi = AdaptiveAbstraction(2, rng=rng)
        phi.update_batch(data)
        s = phi.whitening
        assert np.linalg.norm(s @ covariance @ s.T - np.eye(2)) <= 0.1

    def test_outputs_ordered_by_slowness(self, rng):
        data, _ = mixed_sources()
        phi = AdaptiveAbstraction(2, rng=rng)
        phi.update_batch(data)
        eta, degenerate = eta_inst(phi.output(data[-2000:]))
        assert not degenerate.any()
        assert eta[0] < eta[1]

    def test_weight_rows_stay_unit_norm(self, rng):
        data, _ = mixed_sources(3000)
        phi = AdaptiveAbstraction(2, rng=rng)
        phi.update_batch(data)
        np.testing.assert_allclose(np.linalg.norm(phi.w, axis=1), 1.0, atol=1e-10)

    def test_input_scale_does_not_change_outputs(self):
        data, _ = mixed_sources(3000)
        plain = AdaptiveAbstraction(2, rng=np.random.default_rng(4))
        scaled = AdaptiveAbstraction(2, rng=np.random.default_rng(4))
        plain.update_batch(data)
        scaled.update_batch(2.0 * data)
        np.testing.assert_allclose(scaled.output(2.0 * data[-500:]), plain.output(data[-500:]), atol=1e-2)

    def test_constant_input_leaves_weights(self, rng):
        phi = AdaptiveAbstraction(2, warmup=10, rng=rng)
        w = phi.w.copy()
        phi.update_batch(np.full((200, 2), 3.0))
        np.testing.assert_array_equal(phi.w, w)
        np.testing.assert_allclose(phi.mean, [3.0, 3.0])

    def test_amnesic_rate(self, rng):
        phi = AdaptiveAbstraction(2, amnesic=2.0, rng=rng)
        assert phi._rate(1) == 1.0
        assert phi._rate(2) == pytest.approx(0.5)
        assert phi._rate(3) == pytest.approx(1 / 3)
        assert phi._rate(4) == pytest.approx(0.75)
        assert phi._rate(300) == pytest.approx(0.01)

    def test_invalid_derivative_memory(self):
        with pytest.raises(ValueError):
            AdaptiveAbstraction(2, derivative_memory=0)

    def test_serialization_keeps_derivative_covariance(self, rng):
        data, _ = mixed_sources(300)
        phi = AdaptiveAbstraction(2, warmup=20, derivative_memory=30, rng=rng)
        phi.update_batch(data)
        clone = AdaptiveAbstraction.from_dict(phi.to_dict())
        assert clone.derivative_memory == 30
        np.testing.assert_array_equal(clone._dcov, phi._dcov)
        assert np.trace(phi._dcov) > 0


class TestWeightChangeTracker:

    def test_window_means(self):
        tracker = WeightChangeTracker(3)
        tracker.extend([1.0, 2.0, 3.0])
        assert not tracker.ready
        tracker.extend([0.0, 0.0, 3.0])
        assert tracker.ready
        mean, change = window_means(tracker)
        assert mean == pytest.approx(1.0)
        assert change == pytest.approx(-1.0)

    def test_not_ready(self):
        tracker = WeightChangeTracker(2)
        tracker.push(0.5)
        with pytest.raises(InsufficientStatisticsError):
            window_means(tracker)

    def test_negative_xi(self):
        with pytest.raises(ValueError):
            WeightChangeTracker(2).push(-0.1)


class TestBatchOracle:

    def test_recovers_slow_source(self):
        data, slow = mixed_sources()
        w = batch_sfa_oracle(data, 1)
        y = (data - data.mean(axis=0)) @ w.T
        assert abs_corr(y[:, 0], slow) > 0.99

    def test_outputs_are_white(self):
        data, _ = mixed_sources()
        w = batch_sfa_oracle(data, 2)
        y = (data - data.mean(axis=0)) @ w.T
        np.testing.assert_allclose(np.cov(y, rowvar=False, bias=False), np.eye(2), atol=1e-3)

    def test_singular_covariance(self):
        x = np.linspace(0, 1, 100)
        with pytest.raises(SingularCovarianceError):
            batch_sfa_oracle(np.column_stack([x, 2 * x]), 1)

    def test_too_few_samples(self):
        with pytest.raises(SingularCovarianceError):
            batch_sfa_oracle(np.ones((2, 2)), 1)
