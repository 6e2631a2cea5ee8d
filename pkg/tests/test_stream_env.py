import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from core.config import SceneSpec, StreamSpec
from core.exceptions import StreamError
from core.models import STAY, SWITCH
from services.stream_env import (
    BlobScene,
    BlobSceneParams,
    EnvState,
    NoiseStream,
    NoiseStreamParams,
    OscStreamParams,
    OscillatorStream,
    StreamEnvironment,
    SwapSchedule,
    THETA_PERIOD,
    build_generator,
    env_step,
    osc_sample,
    render_blob_frame,
)


def make_env(tau=10, clock="observed", initial=0, seed=0):
    generators = [OscillatorStream(OscStreamParams(f)) for f in ("x1", "x2", "x3")]
    return StreamEnvironment(generators, tau, np.random.default_rng(seed), clock=clock, initial=initial)


class TestOscillators:

    def test_x3_at_zero(self):
        np.testing.assert_allclose(osc_sample(OscStreamParams("x3"), 0), [1.0, 2.0])

    def test_x1_at_zero(self):
        np.testing.assert_allclose(osc_sample(OscStreamParams("x1"), 0), [-np.sqrt(0.5) - 1.0, 1.0])

    def test_x2_at_zero(self):
        np.testing.assert_allclose(osc_sample(OscStreamParams("x2"), 0), [1.0, 1.0])

    @given(st.integers(min_value=0, max_value=10 ** 6), st.sampled_from(["x1", "x2", "x3"]))
    def test_exactly_periodic(self, t, family):
        params = OscStreamParams(family)
        np.testing.assert_array_equal(osc_sample(params, t), osc_sample(params, t + THETA_PERIOD))

    def test_vectorized_shape(self):
        out = osc_sample(OscStreamParams("x2"), np.arange(7))
        assert out.shape == (7, 2)

    def test_negative_time_rejected(self):
        with pytest.raises(StreamError):
            osc_sample(OscStreamParams("x1"), -1)

    def test_unknown_family(self):
        with pytest.raises(StreamError):
            OscStreamParams("x4")


class TestNoise:

    def test_deterministic_given_seed_and_time(self):
        stream = NoiseStream(NoiseStreamParams(2, -1.0, 1.0, seed=7))
        a, _ = stream.block(30, 10)
        b, _ = stream.block(30, 10)
        np.testing.assert_array_equal(a, b)
        assert np.all((a >= -1.0) & (a <= 1.0))

    def test_zero_stream(self):
        stream = build_generator(StreamSpec(kind="zero"), seed=1)
        samples, latents = stream.block(0, 5)
        assert stream.label == "zero"
        assert latents is None
        np.testing.assert_array_equal(samples, np.zeros((5, 2)))

    def test_empty_range_rejected(self):
        with pytest.raises(StreamError):
            NoiseStreamParams(2, 1.0, -1.0, seed=0)


class TestBlobScene:

    def test_single_object_lights_cross(self):
        params = BlobSceneParams()
        frame = render_blob_frame(params, np.array([[3.0, 4.0]]), viewport=0)
        assert frame.shape == (params.viewport_width * params.height,)
        assert frame.sum() == 5
        assert frame[4 * params.viewport_width + 3] == 1.0

    def test_object_outside_viewport(self):
        params = BlobSceneParams()
        frame = render_blob_frame(params, np.array([[3.0, 4.0]]), viewport=2)
        assert frame.sum() == 0

    def test_bad_viewport(self):
        with pytest.raises(StreamError):
            render_blob_frame(BlobSceneParams(), np.zeros((1, 2)), viewport=3)

    def test_render_shapes_and_toggle(self, rng):
        params = BlobSceneParams.from_spec(SceneSpec())
        scene = BlobScene(params, rng)
        frames, latents = scene.render(0, 12)
        assert frames.shape == (12, params.frame_dim)
        assert latents.shape == (12, 6)
        # frames 1-4 on the first row, 5-9 on the second, 10-12 back on the first
        np.testing.assert_array_equal(latents[:4, 1], 2.0)
        np.testing.assert_array_equal(latents[4:9, 1], 7.0)
        np.testing.assert_array_equal(latents[9:, 1], 2.0)

    def test_each_object_seen_by_its_own_viewport_only(self, rng):
        params = BlobSceneParams.from_spec(SceneSpec())
        scene = BlobScene(params, rng)
        for _ in range(500):
            positions = scene.advance()
            for obj in range(3):
                for viewport in range(3):
                    lit = render_blob_frame(params, positions[obj:obj + 1], viewport).sum()
                    if viewport == obj:
                        assert lit > 0
                    else:
                        assert lit == 0

    def test_blob_generator_needs_scene(self):
        with pytest.raises(StreamError):
            build_generator(StreamSpec(kind="blob", viewport=0), seed=0)


class TestEnvironment:

    def test_stay_keeps_stream(self):
        env = make_env(initial=1)
        batch = env.step(STAY)
        assert batch.stream == 1
        assert batch.samples.shape == (10, 2)
        assert env.state.clocks == [0, 10, 0]

    def test_switch_always_leaves(self):
        env = make_env(initial=0, seed=3)
        for _ in range(50):
            before = env.state.current
            batch = env.step(SWITCH)
            assert batch.stream != before

    def test_switch_targets_cover_other_streams(self):
        env = make_env(initial=0, seed=5)
        targets = {env.switch_target() for _ in range(200)}
        assert targets == {1, 2}

    def test_switch_is_uniform(self):
        env = make_env(initial=0, seed=11)
        targets = np.array([env.switch_target() for _ in range(10000)])
        assert 0.48 <= np.mean(targets == 1) <= 0.52
        assert 0.48 <= np.mean(targets == 2) <= 0.52

    def test_observed_clock_resumes_stream(self):
        env = make_env(initial=0)
        first = env.step(STAY)
        env.state.current = 1
        env.step(STAY)
        env.step(STAY)
        env.state.current = 0
        resumed = env.step(STAY)
        assert resumed.start_time == first.start_time + 10
        assert env.state.global_time == 40

    def test_global_clock(self):
        env = make_env(clock="global", initial=2)
        env.step(STAY)
        batch = env.step(STAY)
        assert batch.start_time == 10
        assert env.state.clocks == [20, 20, 20]

    def test_samples_follow_stream_time(self):
        env = make_env(initial=2)
        env.step(STAY)
        batch = env.step(STAY)
        np.testing.assert_allclose(batch.samples, osc_sample(OscStreamParams("x3"), np.arange(10, 20)))

    def test_invalid_action(self):
        with pytest.raises(ValueError):
            make_env().step(2)

    def test_dimension_mismatch(self, rng):
        generators = [OscillatorStream(OscStreamParams("x1")), NoiseStream(NoiseStreamParams(3, -1, 1, 0))]
        with pytest.raises(StreamError):
            StreamEnvironment(generators, 10, rng)

    def test_state_validation(self, rng):
        with pytest.raises(StreamError):
            EnvState(current=0, clocks=[0], global_time=0, n=1, tau=10, rng=rng)
        with pytest.raises(StreamError):
            EnvState(current=0, clocks=[0, 0], global_time=0, n=2, tau=1, rng=rng)

    def test_env_step_returns_state(self):
        env = make_env(initial=0)
        batch, state = env_step(env, STAY)
        assert state is env.state
        assert batch.stream == 0


class TestSwap:

    def test_fires_once_below_threshold(self):
        env = make_env()
        schedule = SwapSchedule(epsilon_c=0.9, target=0, replacement=NoiseStream(NoiseStreamParams(2, 0, 0, 0)))
        assert not env.apply_swap(schedule, 0.95)
        assert env.apply_swap(schedule, 0.89)
        assert env.labels[0] == "zero"
        assert not env.apply_swap(schedule, 0.5)
        assert schedule.fired

    def test_no_schedule(self):
        assert not make_env().apply_swap(None, 0.0)

    @given(st.lists(st.floats(min_value=0, max_value=1.2), min_size=1, max_size=30),
           st.floats(min_value=0.05, max_value=1.0))
    def test_fire_once_property(self, epsilons, epsilon_c):
        env = make_env()
        schedule = SwapSchedule(epsilon_c=epsilon_c, target=1, replacement=NoiseStream(NoiseStreamParams(2, 0, 0, 0)))
        fired = [env.apply_swap(schedule, eps) for eps in epsilons]
        assert sum(fired) <= 1
        below = [i for i, eps in enumerate(epsilons) if eps < epsilon_c]
        if below:
            assert fired.index(True) == below[0]
        else:
            assert not any(fired)
