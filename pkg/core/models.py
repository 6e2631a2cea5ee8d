"""
models.py - Data models with type safety and validation

Dataclass-based models shared by the services:
- ObservationBatch: tau consecutive observations from one stream
- SubPolicy / QFunction / RewardParams: the reinforcement learner's values
- AbstractionRecord: metadata of one frozen abstraction
- TrialSummary: per-trial outcome used by the harness
"""

from dataclasses import dataclass, field, asdict
from typing import Optional, List, Dict, Any, Sequence, Tuple

import math
import numpy as np

STAY = 0
SWITCH = 1
ACTIONS = (STAY, SWITCH)

# Outcome classes of a trial
NEW_OPTIMAL = "new-optimal"
OLD_OPTIMAL = "old-optimal"
ORDERED = "ordered"
OTHER = "other"
OUTCOMES = (NEW_OPTIMAL, OLD_OPTIMAL, ORDERED, OTHER)


@dataclass
class ObservationBatch:
    """
    Tau consecutive vector observations from one stream.

    Attributes:
        stream: Index of the stream slot that produced the batch
        samples: Array of shape (tau, I)
        start_time: Sample index (stream clock) of the first row
        latents: Optional ground-truth latent values, shape (tau, L)
    """
    stream: int
    samples: np.ndarray
    start_time: int
    latents: Optional[np.ndarray] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"samples must have shape (tau, I), got {self.samples.shape}")
        if self.stream < 0:
            raise ValueError(f"stream index must be >= 0, got {self.stream}")
        if self.latents is not None and len(self.latents) != len(self.samples):
            raise ValueError("latents must have one row per sample")

    @property
    def tau(self) -> int:
        return self.samples.shape[0]

    @property
    def input_dim(self) -> int:
        return self.samples.shape[1]

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.samples)))


@dataclass(frozen=True)
class SubPolicy:
    """
    Stay/switch action per stream index.

    Attributes:
        actions: One action per stream, 0 = stay, 1 = switch
    """
    actions: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if not self.actions:
            raise ValueError("SubPolicy needs one action per stream")
        if any(a not in ACTIONS for a in self.actions):
            raise ValueError(f"actions must be 0 (stay) or 1 (switch), got {self.actions}")

    def __getitem__(self, state: int) -> int:
        return self.actions[state]

    def __len__(self) -> int:
        return len(self.actions)

    def __str__(self) -> str:
        return ",".join(str(a) for a in self.actions)

    def to_list(self) -> List[int]:
        return list(self.actions)

    @classmethod
    def from_string(cls, text: str) -> "SubPolicy":
        return cls(tuple(int(a) for a in text.split(",")))

    @classmethod
    def stay_at(cls, state: int, n: int) -> "SubPolicy":
        """Policy that stays at one stream and switches everywhere else"""
        return cls(tuple(STAY if s == state else SWITCH for s in range(n)))


@dataclass
class QFunction:
    """
    State-action values of the stream selection problem.

    Attributes:
        q: Array of shape (n, 2)
        gamma: Discount factor in [0, 1)
    """
    q: np.ndarray
    gamma: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.ndim != 2 or self.q.shape[1] != len(ACTIONS):
            raise ValueError(f"Q must have shape (n, 2), got {self.q.shape}")
        if not np.all(np.isfinite(self.q)):
            raise ValueError("Q must be finite")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")

    @property
    def values(self) -> np.ndarray:
        return self.q.max(axis=1)


@dataclass(frozen=True)
class RewardParams:
    """
    Constants of the intrinsic reward.

    Attributes:
        beta: Weight of the expert term
        sigma: Width of the expert Gaussian (0 disables it except at exactly zero)
    """
    beta: float
    sigma: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @classmethod
    def auto(cls, nu: float, n: int, sigma: float) -> "RewardParams":
        """beta = nu * log(2) / (2 (n - 1))"""
        return cls(beta=nu * math.log(2) / (2 * (n - 1)), sigma=sigma)


@dataclass
class AbstractionRecord:
    """
    Metadata of one frozen abstraction.

    Attributes:
        u: 1-based index in freeze order
        iteration: Trial iteration at which it was frozen
        iterations_to_freeze: Iterations spent learning it (learning-difficulty metric)
        final_eta: Batch-level eta per output component at freeze
        eta_mean: Stored moving mean of instantaneous eta
        eta_sd: Stored moving SD of instantaneous eta
        stream: Dominant stream among the last updates before the freeze
        policy: Sub-policy saved with the abstraction
    """
    u: int
    iteration: int
    iterations_to_freeze: int
    final_eta: List[float]
    eta_mean: List[float]
    eta_sd: List[float]
    stream: Optional[int]
    policy: List[int]

    def __post_init__(self):
        if self.u < 1:
            raise ValueError(f"u is 1-based, got {self.u}")
        if self.iterations_to_freeze < 0:
            raise ValueError("iterations_to_freeze must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AbstractionRecord":
        return cls(**data)


@dataclass
class TrialSummary:
    """
    Outcome of one trial.

    Attributes:
        seed: Trial seed
        policies: Converged sub-policies in freeze order
        abstraction_count: Number of frozen abstractions
        iterations_to_freeze: One entry per frozen abstraction
        final_eta: One eta vector per frozen abstraction
        encoded_streams: Dominant stream per frozen abstraction
        termination: all-learned | budget | failed
        iterations: Iterations executed
        outcome: Classification (see OUTCOMES)
        first_policy: Greedy sub-policy of the first learning phase (sweeps)
        epsilon_c: Swap threshold of the trial (sweeps)
        reward_mode: Reward update rule (stability comparison)
        flips: Greedy-policy flips after epsilon reached zero (stability comparison)
        elapsed: Wall-clock seconds
        failed: True when the trial raised instead of finishing
        error: Error message of a failed trial
    """
    seed: int
    policies: List[List[int]] = field(default_factory=list)
    abstraction_count: int = 0
    iterations_to_freeze: List[int] = field(default_factory=list)
    final_eta: List[List[float]] = field(default_factory=list)
    encoded_streams: List[Optional[int]] = field(default_factory=list)
    termination: str = ""
    iterations: int = 0
    outcome: str = OTHER
    first_policy: Optional[List[int]] = None
    epsilon_c: Optional[float] = None
    reward_mode: Optional[str] = None
    flips: Optional[int] = None
    elapsed: float = 0.0
    failed: bool = False
    error: Optional[str] = None

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"outcome must be one of {OUTCOMES}, got {self.outcome!r}")
        if len(self.policies) != self.abstraction_count and not self.failed:
            raise ValueError(
                f"policies ({len(self.policies)}) must match abstraction_count ({self.abstraction_count})"
            )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrialSummary":
        return cls(**data)

    @classmethod
    def failure(cls, seed: int, error: str, **extra) -> "TrialSummary":
        return cls(seed=seed, failed=True, error=error, termination="failed", **extra)


def classify_first_policy(policy: Optional[Sequence[int]], new_optimal: Sequence[int],
                          old_optimal: Sequence[int]) -> str:
    """Map the first converged sub-policy of a swap trial to an outcome class"""
    if policy is None:
        return OTHER
    if list(policy) == list(new_optimal):
        return NEW_OPTIMAL
    if list(policy) == list(old_optimal):
        return OLD_OPTIMAL
    return OTHER


# Type aliases for better code readability
PolicyList = List[SubPolicy]
SummaryList = List[TrialSummary]
