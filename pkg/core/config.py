# config.py
"""
config.py - Settings and experiment configuration

Config keeps the class-level defaults for every hyper-parameter and the
runtime settings read from the environment (.env files are loaded through
python-dotenv). ExperimentConfig is the validated, JSON-backed description of
one experiment; any key can be overridden with a CDMISFA_ environment variable:

    CDMISFA_TAU=50                   -> tau = 50
    CDMISFA_EPSILON__DECAY=0.998     -> epsilon.decay = 0.998
    CDMISFA_SWAP__EPSILON_C=0.86     -> swap.epsilon_c = 0.86
"""

import json
import math
import os
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from dotenv import load_dotenv

from core.exceptions import ConfigError

load_dotenv()

ENV_PREFIX = "CDMISFA_"
RUNTIME_ENV_KEYS = {"LOG_LEVEL", "LOG_TO_FILE", "LOG_DIR"}


class Config:
    """Default hyper-parameters and runtime settings"""

    SCENARIOS = ["stationary", "nonstationary-sweep", "stability-compare", "pixel-surrogate"]
    STREAM_KINDS = ["osc", "noise", "zero", "blob"]
    OSC_FAMILIES = ["x1", "x2", "x3"]
    CLOCKS = ["observed", "global"]
    REWARD_RESETS = ["on_freeze", "never"]
    REWARD_MODES = ["running_mean", "legacy"]
    ESTIMATORS = ["midpoint", "interpolate"]
    SWEEP_AXES = ["epsilon_c", "sigma", "nu", "tau"]

    # Learning hyper-parameters
    nu = 0.05
    delta = 0.0006
    tau = 100
    sigma = 0.0009
    beta = "auto"
    gamma = 0.9

    # Slow feature extraction
    output_dim = 2
    whitening_cap = 8
    warmup = 50
    amnesic = 2.0
    lateral_inhibition = 2.0
    derivative_memory = 50

    # Gating
    eta_rate = 0.0005
    eta_inst_rate = 0.05
    settle_batches = 5
    freeze_epsilon = 0.8
    sd_floor = 1e-6
    sd_floor_ratio = 0.02
    band_width = 2.0
    calibration_batches = 20
    unlearnable_penalty = 0.1

    # Exploration
    epsilon_initial = 1.2
    epsilon_decay = 0.999
    epsilon_stages = [[0.8, 0.95]]

    # Trials
    trials = 20
    seed = 0
    budget = 20000
    patience = 500
    legacy_alpha = 0.1

    # Non-stationary sweep
    epsilon_c_grid = [1.0, 0.96, 0.93, 0.9, 0.86, 0.83, 0.8, 0.76, 0.73, 0.7, 0.6, 0.5, 0.3, 0.1]

    @staticmethod
    def get_settings() -> Dict[str, Any]:
        """Runtime settings taken from the environment"""
        return {
            "jobs": int(os.getenv(f"{ENV_PREFIX}JOBS", "1")),
            "output_dir": os.getenv(f"{ENV_PREFIX}OUTPUT_DIR", "results"),
            "log_level": os.getenv(f"{ENV_PREFIX}LOG_LEVEL", "INFO"),
            "log_to_file": os.getenv(f"{ENV_PREFIX}LOG_TO_FILE", "1") != "0",
        }

    @classmethod
    def log_configuration(cls, config: "ExperimentConfig"):
        """Log the effective experiment configuration"""
        from core.logger import get_logger
        logger = get_logger(__name__)
        logger.info("Configuration:")
        logger.info(f"  - Scenario: {config.scenario}")
        logger.info(f"  - Streams: {[s.label for s in config.streams]}")
        logger.info(f"  - Nu: {config.nu}")
        logger.info(f"  - Delta: {config.delta}")
        logger.info(f"  - Tau: {config.tau}")
        logger.info(f"  - Sigma: {config.sigma}")
        logger.info(f"  - Beta: {config.resolved_beta():.6g} ({config.beta})")
        logger.info(f"  - Gamma: {config.gamma}")
        logger.info(f"  - Epsilon: {config.epsilon.initial} x {config.epsilon.decay}, stages {config.epsilon.stages}")
        logger.info(f"  - Trials: {config.trials} (seed {config.seed})")
        logger.info(f"  - Budget / Patience: {config.budget} / {config.patience}")
        logger.info(f"  - Clock: {config.clock} | Reward: {config.reward_mode}, reset {config.reward_reset}")
        logger.info(f"  - Jobs: {config.jobs} | Output: {config.output_dir}")


def _require(condition: bool, field_name: str, message: str):
    if not condition:
        raise ConfigError(message, field=field_name)


@dataclass
class StreamSpec:
    """
    One observation stream slot.

    Attributes:
        kind: osc | noise | zero | blob
        family: Oscillator family x1 | x2 | x3 (osc only)
        dim: Sample dimension (noise/zero only)
        low: Lower bound of the uniform range (noise only)
        high: Upper bound of the uniform range (noise only)
        viewport: Viewport index of the blob scene (blob only)
    """
    kind: str
    family: Optional[str] = None
    dim: int = 2
    low: float = -1.0
    high: float = 1.0
    viewport: Optional[int] = None

    def __post_init__(self):
        _require(self.kind in Config.STREAM_KINDS, "streams.kind",
                 f"must be one of {Config.STREAM_KINDS}, got {self.kind!r}")
        if self.kind == "osc":
            _require(self.family in Config.OSC_FAMILIES, "streams.family",
                     f"must be one of {Config.OSC_FAMILIES}, got {self.family!r}")
        if self.kind in ("noise", "zero"):
            _require(int(self.dim) >= 1, "streams.dim", "must be >= 1")
        if self.kind == "noise":
            _require(self.low <= self.high, "streams.low", "must not exceed high")
        if self.kind == "zero":
            self.low = 0.0
            self.high = 0.0
        if self.kind == "blob":
            _require(self.viewport is not None and int(self.viewport) >= 0, "streams.viewport",
                     "blob streams need a viewport index >= 0")

    @property
    def label(self) -> str:
        if self.kind == "osc":
            return self.family
        if self.kind == "blob":
            return f"blob{self.viewport}"
        return self.kind

    @classmethod
    def from_dict(cls, data: Union[str, Mapping[str, Any]]) -> "StreamSpec":
        """Accept either a full mapping or a shorthand string (x1, noise, zero, blob:0)"""
        if isinstance(data, str):
            if data in Config.OSC_FAMILIES:
                return cls(kind="osc", family=data)
            if data.startswith("blob:"):
                return cls(kind="blob", viewport=int(data.split(":", 1)[1]))
            return cls(kind=data)
        _check_keys(data, cls, "streams")
        return cls(**data)


@dataclass
class EpsilonSpec:
    """
    Decaying epsilon-greedy schedule.

    Stage rules are [threshold, multiplier]; once epsilon falls below the
    threshold the multiplier replaces the decay. A null multiplier means
    epsilon is set to zero.
    """
    initial: float = Config.epsilon_initial
    decay: float = Config.epsilon_decay
    stages: List[List[Optional[float]]] = field(default_factory=lambda: [list(s) for s in Config.epsilon_stages])

    def __post_init__(self):
        _require(self.initial >= 0, "epsilon.initial", "must be >= 0")
        _require(0 < self.decay <= 1, "epsilon.decay", "must be in (0, 1]")
        for stage in self.stages:
            _require(len(stage) == 2, "epsilon.stages", "each stage is [threshold, multiplier|null]")
            _require(stage[1] is None or 0 < stage[1] <= 1, "epsilon.stages",
                     "multiplier must be in (0, 1] or null")


@dataclass
class SwapSpec:
    """Replace one stream slot the first time epsilon falls below epsilon_c"""
    epsilon_c: float
    target: int
    replacement: StreamSpec

    def __post_init__(self):
        if not isinstance(self.replacement, StreamSpec):
            self.replacement = StreamSpec.from_dict(self.replacement)
        _require(self.target >= 0, "swap.target", "must be >= 0")


@dataclass
class SceneSpec:
    """Synthetic three-viewport blob scene"""
    width: int = 30
    height: int = 10
    viewport_width: int = 12
    offsets: List[int] = field(default_factory=lambda: [0, 9, 18])
    radius: float = 1.0
    toggle_period: int = 5
    toggle_rows: List[float] = field(default_factory=lambda: [2.0, 7.0])
    x_ranges: List[List[float]] = field(default_factory=lambda: [[1.0, 6.0], [13.5, 16.5], [23.0, 28.0]])
    walk_step: float = 1.0
    walk_y_ratio: float = 0.2

    def __post_init__(self):
        _require(self.width > 0 and self.height > 0, "scene.width", "scene must be non-empty")
        for offset in self.offsets:
            _require(0 <= offset and offset + self.viewport_width <= self.width, "scene.offsets",
                     "viewports must lie inside the scene")
        _require(len(self.x_ranges) == 3, "scene.x_ranges", "one range per object")
        _require(self.toggle_period >= 1, "scene.toggle_period", "must be >= 1")


@dataclass
class ExperimentConfig:
    """
    Complete description of one experiment.

    Attributes:
        scenario: stationary | nonstationary-sweep | stability-compare | pixel-surrogate
        streams: Stream slots, one per state of the exploration environment
        beta: Expert-reward weight, or "auto" for nu*log(2)/(2(n-1))
        eta_inst_rate: Per-batch rate of the moving mean/SD of instantaneous eta
        max_abstractions: Stop once this many abstractions are frozen (default: n)
        sweep: Parameter grid for the sweep command, axis -> values
    """
    scenario: str = "stationary"
    streams: List[StreamSpec] = field(default_factory=lambda: [StreamSpec.from_dict(f) for f in Config.OSC_FAMILIES])
    nu: float = Config.nu
    delta: float = Config.delta
    tau: int = Config.tau
    sigma: float = Config.sigma
    beta: Union[str, float] = Config.beta
    gamma: float = Config.gamma
    lateral_inhibition: float = Config.lateral_inhibition
    derivative_memory: int = Config.derivative_memory
    output_dim: int = Config.output_dim
    whitening_cap: int = Config.whitening_cap
    warmup: int = Config.warmup
    amnesic: float = Config.amnesic
    eta_rate: float = Config.eta_rate
    eta_inst_rate: float = Config.eta_inst_rate
    settle_batches: int = Config.settle_batches
    freeze_epsilon: float = Config.freeze_epsilon
    sd_floor: float = Config.sd_floor
    sd_floor_ratio: float = Config.sd_floor_ratio
    band_width: float = Config.band_width
    calibration_batches: int = Config.calibration_batches
    unlearnable_penalty: float = Config.unlearnable_penalty
    epsilon: EpsilonSpec = field(default_factory=EpsilonSpec)
    trials: int = Config.trials
    seed: int = Config.seed
    budget: int = Config.budget
    patience: int = Config.patience
    max_abstractions: Optional[int] = None
    clock: str = "observed"
    reward_reset: str = "on_freeze"
    reward_mode: str = "running_mean"
    legacy_alpha: float = Config.legacy_alpha
    swap: Optional[SwapSpec] = None
    epsilon_c_grid: List[float] = field(default_factory=lambda: list(Config.epsilon_c_grid))
    sweep: Dict[str, List[float]] = field(default_factory=dict)
    estimator: str = "midpoint"
    scene: SceneSpec = field(default_factory=SceneSpec)
    jobs: int = 1
    output_dir: str = "results"
    export_excel: bool = True

    def __post_init__(self):
        self.validate()

    # ----- validation -----

    def validate(self):
        """Raise ConfigError naming the first invalid field"""
        _require(self.scenario in Config.SCENARIOS, "scenario",
                 f"must be one of {Config.SCENARIOS}, got {self.scenario!r}")
        _require(len(self.streams) >= 2, "streams", "need at least 2 streams")
        _require(self.tau >= 2, "tau", "must be >= 2")
        _require(self.delta > 0, "delta", "must be > 0")
        _require(self.nu > 0, "nu", "must be > 0")
        _require(self.sigma >= 0, "sigma", "must be >= 0")
        _require(self.beta == "auto" or (isinstance(self.beta, (int, float)) and self.beta >= 0),
                 "beta", "must be 'auto' or a number >= 0")
        _require(0 <= self.gamma < 1, "gamma", "must be in [0, 1)")
        _require(self.output_dim >= 1, "output_dim", "must be >= 1")
        _require(self.whitening_cap >= self.output_dim, "whitening_cap", "must be >= output_dim")
        _require(self.warmup >= 1, "warmup", "must be >= 1")
        _require(self.derivative_memory >= 1, "derivative_memory", "must be >= 1")
        _require(0 < self.eta_rate <= 1, "eta_rate", "must be in (0, 1]")
        _require(0 < self.eta_inst_rate <= 1, "eta_inst_rate", "must be in (0, 1]")
        _require(self.settle_batches >= 1, "settle_batches", "must be >= 1")
        _require(self.sd_floor > 0, "sd_floor", "must be > 0")
        _require(self.freeze_epsilon > 0, "freeze_epsilon", "must be > 0")
        _require(self.sd_floor_ratio >= 0, "sd_floor_ratio", "must be >= 0")
        _require(self.calibration_batches >= 2, "calibration_batches", "must be >= 2")
        _require(self.unlearnable_penalty >= 0, "unlearnable_penalty", "must be >= 0")
        _require(self.trials >= 1, "trials", "must be >= 1")
        _require(self.budget >= 1, "budget", "must be >= 1")
        _require(self.patience >= 1, "patience", "must be >= 1")
        _require(self.max_abstractions is None or self.max_abstractions >= 1, "max_abstractions", "must be >= 1")
        _require(self.clock in Config.CLOCKS, "clock", f"must be one of {Config.CLOCKS}")
        _require(self.reward_reset in Config.REWARD_RESETS, "reward_reset", f"must be one of {Config.REWARD_RESETS}")
        _require(self.reward_mode in Config.REWARD_MODES, "reward_mode", f"must be one of {Config.REWARD_MODES}")
        _require(0 < self.legacy_alpha <= 1, "legacy_alpha", "must be in (0, 1]")
        _require(self.estimator in Config.ESTIMATORS, "estimator", f"must be one of {Config.ESTIMATORS}")
        _require(self.jobs >= 1, "jobs", "must be >= 1")
        for axis in self.sweep:
            _require(axis in Config.SWEEP_AXES, "sweep", f"unknown axis {axis!r}, expected {Config.SWEEP_AXES}")
        if self.swap is not None:
            _require(self.swap.target < len(self.streams), "swap.target", "must index an existing stream")
        if self.scenario == "nonstationary-sweep":
            _require(self.swap is not None, "swap", "nonstationary-sweep needs a swap schedule")
        for spec in self.streams:
            if spec.kind == "blob":
                _require(spec.viewport < len(self.scene.offsets), "streams.viewport", "viewport index out of range")
        dims = {self.stream_dim(spec) for spec in self.streams}
        if self.swap is not None:
            dims.add(self.stream_dim(self.swap.replacement))
        _require(len(dims) == 1, "streams", f"all streams must share one dimension, got {sorted(dims)}")

    def stream_dim(self, spec: StreamSpec) -> int:
        if spec.kind == "osc":
            return 2
        if spec.kind == "blob":
            return self.scene.viewport_width * self.scene.height
        return int(spec.dim)

    # ----- derived values -----

    @property
    def n_streams(self) -> int:
        return len(self.streams)

    @property
    def input_dim(self) -> int:
        return self.stream_dim(self.streams[0])

    @property
    def whitening_dim(self) -> int:
        """K = I for low-dimensional streams, capped for pixel streams"""
        return min(self.input_dim, self.whitening_cap)

    @property
    def abstraction_cap(self) -> int:
        return self.max_abstractions or self.n_streams

    def resolved_beta(self) -> float:
        """Expert-reward weight; auto uses nu*log(2)/(2(n-1))"""
        if self.beta == "auto":
            return self.nu * math.log(2) / (2 * (self.n_streams - 1))
        return float(self.beta)

    # ----- (de)serialization -----

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """
        Build a validated config from a plain mapping.

        Raises:
            ConfigError: Unknown key or invalid value (message names the field)
        """
        _check_keys(data, cls, "config")
        data = dict(data)
        try:
            if "streams" in data:
                data["streams"] = [StreamSpec.from_dict(s) for s in data["streams"]]
            if "epsilon" in data:
                _check_keys(data["epsilon"], EpsilonSpec, "epsilon")
                data["epsilon"] = EpsilonSpec(**data["epsilon"])
            if data.get("swap") is not None:
                _check_keys(data["swap"], SwapSpec, "swap")
                data["swap"] = SwapSpec(**data["swap"])
            if "scene" in data:
                _check_keys(data["scene"], SceneSpec, "scene")
                data["scene"] = SceneSpec(**data["scene"])
            return cls(**data)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: Union[str, Path], environ: Optional[Mapping[str, str]] = None) -> "ExperimentConfig":
        """
        Load a JSON config and apply environment overrides.

        Raises:
            FileNotFoundError: The file does not exist
            ConfigError: Malformed JSON or invalid values
        """
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON at line {e.lineno}: {e.msg}") from e
        data = apply_env_overrides(data, os.environ if environ is None else environ)
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Return a validated copy with some top-level keys replaced"""
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)


def _check_keys(data: Mapping[str, Any], cls, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"expected an object, got {type(data).__name__}", field=where)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", field=where)


def _parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(data: Mapping[str, Any], environ: Mapping[str, str]) -> Dict[str, Any]:
    """
    Overlay CDMISFA_* variables on a raw config mapping.

    Args:
        data: Raw config mapping (as read from JSON)
        environ: Environment mapping

    Returns:
        New mapping with the overrides applied
    """
    result = json.loads(json.dumps(data))
    known = {f.name for f in fields(ExperimentConfig)}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):]
        if name in RUNTIME_ENV_KEYS:
            continue
        path = [part.lower() for part in name.split("__")]
        if path[0] not in known:
            continue
        target = result
        for part in path[:-1]:
            if not isinstance(target.get(part), dict):
                target[part] = {}
            target = target[part]
        target[path[-1]] = _parse_env_value(environ[key])
    return result
