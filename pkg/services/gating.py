# gating.py
"""
gating.py - Convergence test and novelty filter

EtaStats tracks the slowness measure

    eta(y) = 1/(2 pi) * sqrt(E(ydot^2) / Var(y))

of every output of the adaptive abstraction with per-sample exponential
moving averages, its per-batch change eta_dot, and a moving mean/SD of the
per-batch (instantaneous) eta. The abstraction converges when every
non-degenerate |eta_dot| stays below delta for `settle_batches` batches
fed on one uninterrupted stay.

A frozen abstraction keeps an instantaneous-eta mean and SD per component;
a batch is known to it when every non-degenerate component falls inside the
mean +/- band_width * SD band. The band is calibrated at freeze time on the
recent batches of the encoded stream, passed through the final map; the
moving statistics are the fallback when fewer than two such batches exist.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from core.exceptions import DimensionMismatchError
from core.logger import get_logger
from core.models import ObservationBatch
from services.incsfa import AdaptiveAbstraction

logger = get_logger(__name__)

VAR_FLOOR = 1e-12
TWO_PI = 2.0 * np.pi


def _eta(mean_sq_derivative: np.ndarray, variance: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    degenerate = variance < VAR_FLOOR
    safe = np.where(degenerate, 1.0, variance)
    eta = np.sqrt(np.maximum(mean_sq_derivative, 0.0) / safe) / TWO_PI
    return np.where(degenerate, np.nan, eta), degenerate


def eta_inst(y_series: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Instantaneous slowness of each output component over one batch.

    Args:
        y_series: Array of shape (tau, J), tau >= 2

    Returns:
        (eta, degenerate) with eta NaN where the component variance is below 1e-12

    Example:
        >>> t = np.arange(100)
        >>> eta, degenerate = eta_inst(np.sin(2 * np.pi * t / 500)[:, None])
    """
    y = np.asarray(y_series, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if len(y) < 2:
        raise ValueError("eta_inst needs at least 2 samples")
    ydot = np.diff(y, axis=0)
    return _eta(np.mean(ydot ** 2, axis=0), np.var(y, axis=0))


def _ema(series: np.ndarray, previous: np.ndarray, rate: float) -> np.ndarray:
    """Final value of m <- (1 - rate) m + rate x applied over the rows of series"""
    zi = ((1.0 - rate) * previous)[None, :]
    out, _ = lfilter([rate], [1.0, -(1.0 - rate)], series, axis=0, zi=zi)
    return out[-1]


@dataclass
class EtaStats:
    """
    Slowness statistics of the adaptive abstraction outputs.

    Attributes:
        output_dim: Number of output components J
        rate: Per-sample EMA rate of E(y), E(y^2) and E(ydot^2)
        inst_rate: Per-batch rate of the moving mean/SD of instantaneous eta
        settle_batches: Consecutive batches that must satisfy |eta_dot| < delta;
            restart_settling() empties the count
    """
    output_dim: int
    rate: float = 0.0005
    inst_rate: float = 0.05
    settle_batches: int = 5
    batches: int = 0
    mean_y: np.ndarray = None
    mean_y2: np.ndarray = None
    mean_ydot2: np.ndarray = None
    eta: Optional[np.ndarray] = None
    eta_prev: Optional[np.ndarray] = None
    eta_dot: Optional[np.ndarray] = None
    degenerate: np.ndarray = None
    degenerate_batches: int = 0
    inst: Optional[np.ndarray] = None
    inst_mean: Optional[np.ndarray] = None
    inst_var: Optional[np.ndarray] = None
    recent_eta_dot: deque = field(default=None, repr=False)

    def __post_init__(self):
        j = self.output_dim
        self.mean_y = np.zeros(j) if self.mean_y is None else self.mean_y
        self.mean_y2 = np.zeros(j) if self.mean_y2 is None else self.mean_y2
        self.mean_ydot2 = np.zeros(j) if self.mean_ydot2 is None else self.mean_ydot2
        self.degenerate = np.zeros(j, dtype=bool) if self.degenerate is None else self.degenerate
        if self.recent_eta_dot is None:
            self.recent_eta_dot = deque(maxlen=self.settle_batches)

    @property
    def variance(self) -> np.ndarray:
        return np.maximum(self.mean_y2 - self.mean_y ** 2, 0.0)

    @property
    def inst_sd(self) -> Optional[np.ndarray]:
        return None if self.inst_var is None else np.sqrt(self.inst_var)

    def restart_settling(self):
        """Drop the settled-batch history, e.g. after the agent switched streams"""
        self.recent_eta_dot.clear()


def update_eta_stats(stats: EtaStats, y_series: np.ndarray) -> EtaStats:
    """
    Fold one batch of outputs into the slowness statistics (in place).

    Args:
        stats: Statistics to advance
        y_series: Outputs of the batch, shape (tau, J)

    Returns:
        The same EtaStats object
    """
    y = np.asarray(y_series, dtype=float)
    if y.ndim != 2 or y.shape[1] != stats.output_dim:
        raise DimensionMismatchError(f"expected outputs of shape (tau, {stats.output_dim}), got {y.shape}")
    ydot2 = np.diff(y, axis=0) ** 2

    if stats.batches == 0:
        stats.mean_y = y.mean(axis=0)
        stats.mean_y2 = (y ** 2).mean(axis=0)
        stats.mean_ydot2 = ydot2.mean(axis=0)
    else:
        stats.mean_y = _ema(y, stats.mean_y, stats.rate)
        stats.mean_y2 = _ema(y ** 2, stats.mean_y2, stats.rate)
        stats.mean_ydot2 = _ema(ydot2, stats.mean_ydot2, stats.rate)
    stats.batches += 1

    eta, degenerate = _eta(stats.mean_ydot2, stats.variance)
    inst, inst_degenerate = eta_inst(y)
    degenerate = degenerate | inst_degenerate
    stats.degenerate = degenerate
    if degenerate.any():
        stats.degenerate_batches += 1

    stats.eta_prev = stats.eta
    stats.eta = eta
    if stats.eta_prev is not None:
        stats.eta_dot = stats.eta - stats.eta_prev
        stats.recent_eta_dot.append(stats.eta_dot.copy())

    stats.inst = inst
    if stats.inst_mean is None:
        stats.inst_mean = inst.copy()
        stats.inst_var = np.zeros_like(inst)
    else:
        # Exponentially weighted mean and variance
        a = stats.inst_rate
        diff = inst - stats.inst_mean
        stats.inst_mean = stats.inst_mean + a * diff
        stats.inst_var = (1.0 - a) * (stats.inst_var + a * diff ** 2)
    return stats


def converged(stats: EtaStats, delta: float) -> bool:
    """
    True when every non-degenerate component kept |eta_dot| < delta over the
    last `settle_batches` batches. An all-degenerate abstraction never converges.
    """
    if len(stats.recent_eta_dot) < stats.settle_batches:
        return False
    if stats.degenerate.all():
        return False
    for eta_dot in stats.recent_eta_dot:
        active = ~np.isnan(eta_dot) & ~stats.degenerate
        if not active.any() or not np.all(np.abs(eta_dot[active]) < delta):
            return False
    return True


@dataclass(frozen=True, eq=False)
class FrozenAbstraction:
    """
    Immutable snapshot of an adaptive abstraction plus its novelty band.

    Attributes:
        mean: Input mean (I,)
        components: Normalized principal components V (K, I)
        eigenvalues: Eigenvalue estimates (K,)
        w: Slow-feature weights (J, K)
        composite: phi = W S (J, I)
        eta_mean: Stored mean of instantaneous eta (J,)
        eta_sd: Stored SD of instantaneous eta (J,), floored
        header: Dimensions and hyper-parameters
        provenance: u, iteration, policy, encoded stream
    """
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    w: np.ndarray
    composite: np.ndarray
    eta_mean: np.ndarray
    eta_sd: np.ndarray
    header: Dict[str, Any]
    provenance: Dict[str, Any]

    def __post_init__(self):
        for name in ("mean", "components", "eigenvalues", "w", "composite", "eta_mean", "eta_sd"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(self.eta_sd <= 0):
            raise ValueError("stored SDs must be > 0")

    @property
    def input_dim(self) -> int:
        return self.composite.shape[1]

    @property
    def output_dim(self) -> int:
        return self.composite.shape[0]

    def output(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatchError(f"abstraction expects dimension {self.input_dim}, got {x.shape[-1]}")
        return (x - self.mean) @ self.composite.T

    def band(self, width: float = 2.0) -> Tuple[np.ndarray, np.ndarray]:
        return self.eta_mean - width * self.eta_sd, self.eta_mean + width * self.eta_sd

    def knows(self, samples: np.ndarray, width: float = 2.0) -> bool:
        """Every non-degenerate component of the batch lies inside the stored band"""
        eta, degenerate = eta_inst(self.output(samples))
        active = ~degenerate
        if not active.any():
            return False
        low, high = self.band(width)
        return bool(np.all((eta[active] >= low[active]) & (eta[active] <= high[active])))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "header": dict(self.header, kind="frozen"),
            "arrays": {
                "mean": self.mean.tolist(),
                "components": self.components.ravel().tolist(),
                "eigenvalues": self.eigenvalues.tolist(),
                "w": self.w.ravel().tolist(),
                "composite": self.composite.ravel().tolist(),
                "eta_mean": self.eta_mean.tolist(),
                "eta_sd": self.eta_sd.tolist(),
            },
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FrozenAbstraction":
        h, a = data["header"], data["arrays"]
        i, j, k = h["input_dim"], h["output_dim"], h["whitening_dim"]
        return cls(
            mean=np.array(a["mean"]),
            components=np.array(a["components"]).reshape(k, i),
            eigenvalues=np.array(a["eigenvalues"]),
            w=np.array(a["w"]).reshape(j, k),
            composite=np.array(a["composite"]).reshape(j, i),
            eta_mean=np.array(a["eta_mean"]),
            eta_sd=np.array(a["eta_sd"]),
            header={key: value for key, value in h.items() if key != "kind"},
            provenance=dict(data.get("provenance", {})),
        )


def calibrate_band(mean: np.ndarray, composite: np.ndarray,
                   batches: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and population SD of the instantaneous eta of each batch under a fixed map.

    Args:
        mean: Input mean (I,)
        composite: Composite map (J, I)
        batches: Raw batches of shape (tau, I)

    Returns:
        (eta mean, eta SD) per component; 0 for components degenerate in every batch
    """
    if len(batches) == 0:
        raise ValueError("calibration needs at least one batch")
    etas = np.array([eta_inst((np.asarray(b, dtype=float) - mean) @ composite.T)[0] for b in batches])
    valid = ~np.isnan(etas)
    counts = np.maximum(valid.sum(axis=0), 1)
    eta_mean = np.where(valid, etas, 0.0).sum(axis=0) / counts
    eta_var = (np.where(valid, etas - eta_mean, 0.0) ** 2).sum(axis=0) / counts
    return eta_mean, np.sqrt(eta_var)


def freeze(abstraction: AdaptiveAbstraction, stats: EtaStats, sd_floor: float = 1e-6,
           provenance: Optional[Dict[str, Any]] = None,
           calibration: Optional[Sequence[np.ndarray]] = None,
           sd_floor_ratio: float = 0.0) -> FrozenAbstraction:
    """
    Snapshot the adaptive abstraction with its instantaneous-eta band.

    Args:
        abstraction: Abstraction to snapshot
        stats: Its slowness statistics
        sd_floor: Absolute lower bound of the stored SDs
        provenance: Metadata stored with the snapshot
        calibration: Recent raw batches of the encoded stream; with two or more
            the band is measured on them under the final map, otherwise the
            moving instantaneous-eta statistics are used
        sd_floor_ratio: Lower bound of each stored SD relative to its mean

    Degenerate components get a NaN-free band (mean 0, floor SD); they are
    excluded from novelty tests anyway.
    """
    if calibration is not None and len(calibration) >= 2:
        inst_mean, inst_sd = calibrate_band(abstraction.mean, abstraction.composite, calibration)
        source = "calibrated"
    else:
        inst_mean = np.nan_to_num(stats.inst_mean if stats.inst_mean is not None else np.zeros(stats.output_dim))
        inst_sd = np.nan_to_num(stats.inst_sd if stats.inst_sd is not None else np.zeros(stats.output_dim))
        source = "moving"
    inst_sd = np.maximum(np.maximum(inst_sd, sd_floor), sd_floor_ratio * np.abs(inst_mean))
    header = {
        "input_dim": abstraction.input_dim,
        "output_dim": abstraction.output_dim,
        "whitening_dim": abstraction.whitening_dim,
        "nu": abstraction.nu,
        "lateral_inhibition": abstraction.lateral_inhibition,
        "amnesic": abstraction.amnesic,
        "warmup": abstraction.warmup,
        "derivative_memory": abstraction.derivative_memory,
        "samples": abstraction.n,
        "band": source,
    }
    return FrozenAbstraction(
        mean=abstraction.mean.copy(),
        components=abstraction.components,
        eigenvalues=abstraction.eigenvalues,
        w=abstraction.w.copy(),
        composite=abstraction.composite,
        eta_mean=inst_mean,
        eta_sd=inst_sd,
        header=header,
        provenance=dict(provenance or {}),
    )


class AbstractionLibrary:
    """Ordered, append-only list of frozen abstractions (freeze order)"""

    def __init__(self, abstractions: Optional[Sequence[FrozenAbstraction]] = None, band_width: float = 2.0):
        self._items: List[FrozenAbstraction] = list(abstractions or [])
        self.band_width = band_width

    def append(self, abstraction: FrozenAbstraction):
        self._items.append(abstraction)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[FrozenAbstraction]:
        return iter(self._items)

    def __getitem__(self, index: int) -> FrozenAbstraction:
        return self._items[index]

    def verdicts(self, samples: np.ndarray) -> List[bool]:
        """Known/unknown verdict of every frozen abstraction for one batch"""
        return [phi.knows(samples, self.band_width) for phi in self._items]


def is_novel(batch: ObservationBatch, library: AbstractionLibrary) -> bool:
    """True when no frozen abstraction knows the batch; an empty library finds everything novel"""
    for phi in library:
        if phi.knows(batch.samples, library.band_width):
            return False
    return True


def is_degenerate(batch: ObservationBatch) -> bool:
    """True when every input dimension of the batch is constant (nothing to learn)"""
    return bool(np.all(np.var(batch.samples, axis=0) < VAR_FLOOR))
