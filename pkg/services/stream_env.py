# stream_env.py
"""
stream_env.py - Observation streams and the stay/switch exploration environment

Generators:
- OscillatorStream: the three nonlinear oscillatory families x1, x2, x3
- NoiseStream: i.i.d. uniform noise (zero range gives the zero stream)
- BlobViewportStream: one of three overlapping viewports over a shared blob scene

StreamEnvironment holds one generator per slot. Each step returns a batch of
tau consecutive samples from the current slot after applying stay (0) or
switch (1). Switching picks one of the other n-1 slots uniformly.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.config import SceneSpec, StreamSpec
from core.exceptions import StreamError
from core.logger import get_logger
from core.models import ObservationBatch, STAY, SWITCH

logger = get_logger(__name__)

THETA_PERIOD = 500


@dataclass(frozen=True)
class OscStreamParams:
    """Oscillator family identifier (x1 | x2 | x3)"""
    family: str

    def __post_init__(self):
        if self.family not in ("x1", "x2", "x3"):
            raise StreamError(f"unknown oscillator family {self.family!r}")


@dataclass(frozen=True)
class NoiseStreamParams:
    """Uniform noise in [low, high] per component"""
    dim: int
    low: float
    high: float
    seed: int

    def __post_init__(self):
        if self.dim < 1:
            raise StreamError(f"noise dimension must be >= 1, got {self.dim}")
        if self.low > self.high:
            raise StreamError(f"noise range is empty: [{self.low}, {self.high}]")


@dataclass(frozen=True)
class BlobSceneParams:
    """
    Geometry and motion laws of the synthetic blob scene.

    Object 0 toggles its y-row every toggle_period frames with x uniform,
    object 1 is uniform in x and y, object 2 random-walks with a y step that
    is walk_y_ratio times the x step.
    """
    width: int = 30
    height: int = 10
    viewport_width: int = 12
    offsets: Tuple[int, ...] = (0, 9, 18)
    radius: float = 1.0
    toggle_period: int = 5
    toggle_rows: Tuple[float, float] = (2.0, 7.0)
    x_ranges: Tuple[Tuple[float, float], ...] = ((1.0, 6.0), (13.5, 16.5), (23.0, 28.0))
    walk_step: float = 1.0
    walk_y_ratio: float = 0.2

    @classmethod
    def from_spec(cls, spec: SceneSpec) -> "BlobSceneParams":
        return cls(
            width=spec.width,
            height=spec.height,
            viewport_width=spec.viewport_width,
            offsets=tuple(spec.offsets),
            radius=spec.radius,
            toggle_period=spec.toggle_period,
            toggle_rows=tuple(spec.toggle_rows),
            x_ranges=tuple(tuple(r) for r in spec.x_ranges),
            walk_step=spec.walk_step,
            walk_y_ratio=spec.walk_y_ratio,
        )

    @property
    def frame_dim(self) -> int:
        return self.viewport_width * self.height


def _theta(t) -> np.ndarray:
    # t mod period keeps the phase exactly periodic for large t
    return 2.0 * np.pi * (np.asarray(t) % THETA_PERIOD) / THETA_PERIOD


def osc_sample(params: OscStreamParams, t) -> np.ndarray:
    """
    Sample an oscillatory stream.

    Args:
        params: Oscillator family
        t: Integer time (scalar or array, t >= 0)

    Returns:
        Array of shape (2,) for scalar t, else (len(t), 2)

    Example:
        >>> osc_sample(OscStreamParams("x3"), 0)
        array([1., 2.])
    """
    if np.any(np.asarray(t) < 0):
        raise StreamError("time must be >= 0")
    theta = _theta(t)
    if params.family == "x1":
        fast = np.cos(44 * theta)
        first = np.sin(4 * theta - np.pi / 4.0) - fast ** 2
        second = fast
    elif params.family == "x2":
        fast = np.cos(27 * theta)
        first = np.sin(3 * theta) + fast ** 2
        second = fast
    else:
        fast = np.cos(12 * theta)
        first = fast
        second = np.cos(2 * theta) + fast ** 2
    return np.stack([first, second], axis=-1)


def render_blob_frame(params: BlobSceneParams, object_states: np.ndarray, viewport: int) -> np.ndarray:
    """
    Render one viewport of the blob scene as a flattened grayscale frame.

    Pixel (column c, row r) of the viewport is lit when its center lies within
    `radius` of any object position (x, y) in scene coordinates.

    Args:
        params: Scene geometry
        object_states: Array of shape (n_objects, 2) with (x, y) per object
        viewport: Viewport index

    Returns:
        Vector of length viewport_width * height with values in {0, 1}

    Raises:
        StreamError: Viewport index out of range
    """
    if not 0 <= viewport < len(params.offsets):
        raise StreamError(f"viewport {viewport} out of range [0, {len(params.offsets)})")
    offset = params.offsets[viewport]
    cols = offset + np.arange(params.viewport_width)
    rows = np.arange(params.height)
    grid_x, grid_y = np.meshgrid(cols, rows)

    frame = np.zeros((params.height, params.viewport_width))
    for x, y in np.asarray(object_states, dtype=float).reshape(-1, 2):
        covered = (grid_x - x) ** 2 + (grid_y - y) ** 2 <= params.radius ** 2
        frame[covered] = 1.0
    return frame.ravel()


class BlobScene:
    """Shared world of three moving objects; advances one frame per rendered sample"""

    def __init__(self, params: BlobSceneParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng
        self.frame = 0
        walk_range = params.x_ranges[2]
        self.positions = np.array([
            [params.x_ranges[0][0], params.toggle_rows[0]],
            [params.x_ranges[1][0], 0.0],
            [(walk_range[0] + walk_range[1]) / 2.0, (params.height - 1) / 2.0],
        ])

    def advance(self) -> np.ndarray:
        """Move every object by one frame and return the new positions"""
        p = self.params
        self.frame += 1
        pos = self.positions

        pos[0, 0] = self.rng.uniform(*p.x_ranges[0])
        pos[0, 1] = p.toggle_rows[(self.frame // p.toggle_period) % 2]

        pos[1, 0] = self.rng.uniform(*p.x_ranges[1])
        pos[1, 1] = self.rng.uniform(0.0, p.height - 1)

        step = self.rng.normal(size=2) * p.walk_step * np.array([1.0, p.walk_y_ratio])
        pos[2] += step
        pos[2, 0] = np.clip(pos[2, 0], *p.x_ranges[2])
        pos[2, 1] = np.clip(pos[2, 1], 0.0, p.height - 1)

        pos[:, 0] = np.clip(pos[:, 0], 0.0, p.width - 1)
        return pos.copy()

    def render(self, viewport: int, length: int) -> Tuple[np.ndarray, np.ndarray]:
        frames = np.empty((length, self.params.frame_dim))
        latents = np.empty((length, 2 * len(self.positions)))
        for i in range(length):
            positions = self.advance()
            frames[i] = render_blob_frame(self.params, positions, viewport)
            latents[i] = positions.ravel()
        return frames, latents


class StreamGenerator:
    """Interface of a stream slot generator"""

    dim: int = 0
    label: str = ""

    def block(self, t0: int, length: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Return `length` consecutive samples starting at stream time t0, plus latents"""
        raise NotImplementedError


class OscillatorStream(StreamGenerator):
    def __init__(self, params: OscStreamParams):
        self.params = params
        self.dim = 2
        self.label = params.family

    def block(self, t0, length):
        return osc_sample(self.params, t0 + np.arange(length)), None


class NoiseStream(StreamGenerator):
    """Uniform noise, deterministic given (seed, t0)"""

    def __init__(self, params: NoiseStreamParams):
        self.params = params
        self.dim = params.dim
        self.label = "zero" if params.low == params.high == 0 else "noise"

    def block(self, t0, length):
        p = self.params
        if p.low == p.high:
            return np.full((length, p.dim), float(p.low)), None
        rng = np.random.default_rng([p.seed, t0])
        return rng.uniform(p.low, p.high, size=(length, p.dim)), None


class BlobViewportStream(StreamGenerator):
    """One perspective onto a shared BlobScene; the scene ignores stream time"""

    def __init__(self, scene: BlobScene, viewport: int):
        if not 0 <= viewport < len(scene.params.offsets):
            raise StreamError(f"viewport {viewport} out of range")
        self.scene = scene
        self.viewport = viewport
        self.dim = scene.params.frame_dim
        self.label = f"blob{viewport}"

    def block(self, t0, length):
        return self.scene.render(self.viewport, length)


def build_generator(spec: StreamSpec, seed: int, scene: Optional[BlobScene] = None) -> StreamGenerator:
    """
    Create the generator for one stream slot.

    Args:
        spec: Stream specification from the experiment config
        seed: Seed for noise generators
        scene: Shared blob scene (blob streams only)
    """
    if spec.kind == "osc":
        return OscillatorStream(OscStreamParams(spec.family))
    if spec.kind in ("noise", "zero"):
        return NoiseStream(NoiseStreamParams(int(spec.dim), float(spec.low), float(spec.high), seed))
    if spec.kind == "blob":
        if scene is None:
            raise StreamError("blob streams need a scene")
        return BlobViewportStream(scene, int(spec.viewport))
    raise StreamError(f"unknown stream kind {spec.kind!r}")


@dataclass
class SwapSchedule:
    """
    Replace the generator of one slot the first time epsilon drops below epsilon_c.

    Attributes:
        epsilon_c: Trigger threshold
        target: Slot index to replace
        replacement: Generator installed in the slot
        fired: Set once the swap happened
    """
    epsilon_c: float
    target: int
    replacement: StreamGenerator
    fired: bool = False


@dataclass
class EnvState:
    """
    Mutable state of the exploration environment.

    Attributes:
        current: Index of the current stream
        clocks: Per-stream sample counters
        global_time: Total samples delivered so far
        n: Number of streams
        tau: Samples per batch
        rng: Generator used for switch targets
        clock: observed | global
    """
    current: int
    clocks: List[int]
    global_time: int
    n: int
    tau: int
    rng: np.random.Generator = field(repr=False)
    clock: str = "observed"

    def __post_init__(self):
        if self.n < 2:
            raise StreamError(f"need at least 2 streams, got {self.n}")
        if self.tau < 2:
            raise StreamError(f"tau must be >= 2, got {self.tau}")
        if not 0 <= self.current < self.n:
            raise StreamError(f"current stream {self.current} out of range")


class StreamEnvironment:
    """Two-action exploration environment over n stream slots"""

    def __init__(self, generators: Sequence[StreamGenerator], tau: int, rng: np.random.Generator,
                 clock: str = "observed", initial: Optional[int] = None):
        self.generators = list(generators)
        dims = {g.dim for g in self.generators}
        if len(dims) != 1:
            raise StreamError(f"all streams must share one dimension, got {sorted(dims)}")
        n = len(self.generators)
        current = int(rng.integers(n)) if initial is None else initial
        self.state = EnvState(current=current, clocks=[0] * n, global_time=0, n=n, tau=tau,
                              rng=rng, clock=clock)

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def input_dim(self) -> int:
        return self.generators[0].dim

    @property
    def labels(self) -> List[str]:
        return [g.label for g in self.generators]

    def switch_target(self) -> int:
        """Uniform draw among the n-1 streams other than the current one"""
        k = int(self.state.rng.integers(self.state.n - 1))
        return k if k < self.state.current else k + 1

    def step(self, action: int) -> ObservationBatch:
        """
        Apply stay/switch and return the next tau samples of the current stream.

        Args:
            action: 0 = stay, 1 = switch

        Returns:
            ObservationBatch from the (possibly new) current stream
        """
        state = self.state
        if action == SWITCH:
            state.current = self.switch_target()
        elif action != STAY:
            raise ValueError(f"action must be 0 (stay) or 1 (switch), got {action}")

        s = state.current
        t0 = state.global_time if state.clock == "global" else state.clocks[s]
        samples, latents = self.generators[s].block(t0, state.tau)

        state.global_time += state.tau
        if state.clock == "global":
            state.clocks = [state.global_time] * state.n
        else:
            state.clocks[s] += state.tau
        return ObservationBatch(stream=s, samples=samples, start_time=t0, latents=latents)

    def apply_swap(self, schedule: Optional[SwapSchedule], current_epsilon: float) -> bool:
        """
        Fire the swap schedule if epsilon has dropped below its threshold.

        Returns:
            True when the swap fired on this call
        """
        if schedule is None or schedule.fired or current_epsilon >= schedule.epsilon_c:
            return False
        old = self.generators[schedule.target].label
        self.generators[schedule.target] = schedule.replacement
        schedule.fired = True
        logger.info(f"Swap fired at epsilon {current_epsilon:.4f} < {schedule.epsilon_c}: "
                    f"slot {schedule.target} {old} -> {schedule.replacement.label}")
        return True


def env_step(env: StreamEnvironment, action: int) -> Tuple[ObservationBatch, EnvState]:
    """Functional form of StreamEnvironment.step"""
    batch = env.step(action)
    return batch, env.state
