# cdrl.py
"""
cdrl.py - Curiosity-driven reinforcement learner

Intrinsic reward of a transition (s, a, s'):

    r = -<xi_dot> + beta * exp(-<xi>^2 / (2 sigma^2))

The reward tensor R (n x 2 x n) is the running mean of the one-hot
per-step reward tensors. Q and the greedy sub-policy come from policy
iteration with tabular LSTD-Q on the known transition model:
stay keeps the stream, switch lands on one of the other n-1 streams
uniformly.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import EpsilonSpec
from core.exceptions import SolverError
from core.logger import get_logger
from core.models import ACTIONS, QFunction, RewardParams, STAY, SWITCH, SubPolicy

logger = get_logger(__name__)

MAX_POLICY_ITERATIONS = 100


def expert_term(xi_mean: float, params: RewardParams) -> float:
    """beta * Z(<xi>); with sigma = 0 only an exactly zero window mean earns beta"""
    if params.sigma == 0:
        return params.beta if xi_mean == 0 else 0.0
    return params.beta * float(np.exp(-xi_mean ** 2 / (2.0 * params.sigma ** 2)))


def intrinsic_reward(xi_mean: float, xi_dot: float, params: RewardParams) -> float:
    """
    Curiosity plus expert reward.

    Args:
        xi_mean: Current window mean of the weight change
        xi_dot: Difference to the previous window mean
        params: beta and sigma

    Example:
        >>> intrinsic_reward(0.0, 0.0, RewardParams(beta=0.00866, sigma=0.0009))
        0.00866
    """
    return -xi_dot + expert_term(xi_mean, params)


class RewardTensor:
    """Running mean of the one-hot reward tensors, one update per batch"""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError(f"need at least 2 states, got {n}")
        self.n = n
        self.r = np.zeros((n, len(ACTIONS), n))
        self.t = 0

    def reset(self):
        self.r[:] = 0.0
        self.t = 0

    def update(self, s: int, a: int, s_next: int, reward: float):
        """R <- (1/t) R_one_hot + (1 - 1/t) R"""
        if not np.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        self.t += 1
        self.r *= 1.0 - 1.0 / self.t
        self.r[s, a, s_next] += reward / self.t

    def stay_rewards(self) -> np.ndarray:
        """R[s, stay, s] for every stream"""
        idx = np.arange(self.n)
        return self.r[idx, STAY, idx].copy()


def update_reward_tensor(tensor: RewardTensor, s: int, a: int, s_next: int, reward: float) -> RewardTensor:
    """Functional form of RewardTensor.update (updates in place)"""
    tensor.update(s, a, s_next, reward)
    return tensor


def legacy_update_10(r_tilde: np.ndarray, s: int, a: int, s_next: int, reward: float,
                     alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tabular rule with a local update at the visited cell followed by global normalization.

    Args:
        r_tilde: Unnormalized table (n, 2, n)
        alpha: Step size in (0, 1]

    Returns:
        (new unnormalized table, normalized table R = R~ / ||R~||)
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    r_tilde = np.array(r_tilde, dtype=float)
    r_tilde[s, a, s_next] = alpha * reward + (1.0 - alpha) * r_tilde[s, a, s_next]
    norm = np.linalg.norm(r_tilde)
    normalized = r_tilde / norm if norm > 0 else np.zeros_like(r_tilde)
    return r_tilde, normalized


def transition_model(n: int) -> np.ndarray:
    """P[s, a, s']: stay keeps the stream, switch is uniform over the other n-1"""
    p = np.zeros((n, len(ACTIONS), n))
    p[np.arange(n), STAY, np.arange(n)] = 1.0
    p[:, SWITCH, :] = (1.0 - np.eye(n)) / (n - 1)
    return p


def expected_rewards(r: np.ndarray, p: np.ndarray) -> np.ndarray:
    """r(s, a) = sum_s' P(s'|s, a) R(s, a, s')"""
    return np.einsum("ijk,ijk->ij", p, r)


def greedy(q: np.ndarray) -> SubPolicy:
    """Argmax per state; ties (up to round-off) prefer stay"""
    tol = 1e-12 * max(1.0, float(np.max(np.abs(q))))
    return SubPolicy(tuple(SWITCH if q[s, SWITCH] > q[s, STAY] + tol else STAY for s in range(len(q))))


def _evaluate(policy: SubPolicy, rewards: np.ndarray, p: np.ndarray, gamma: float) -> np.ndarray:
    """Tabular LSTD-Q with the full model: solve (Phi - gamma P_pi Phi)^T Phi w = Phi^T r"""
    n = len(policy)
    size = n * len(ACTIONS)
    phi = np.eye(size)
    pi = np.zeros((n, size))
    pi[np.arange(n), np.arange(n) * len(ACTIONS) + np.array(policy.actions)] = 1.0
    phi_next = p.reshape(size, n) @ pi
    a_mat = phi.T @ (phi - gamma * phi_next)
    b = phi.T @ rewards.reshape(size)
    try:
        w = np.linalg.solve(a_mat, b)
    except np.linalg.LinAlgError as e:
        raise SolverError(f"LSTD-Q system is singular: {e}") from e
    return w.reshape(n, len(ACTIONS))


def solve_policy(reward: Union[RewardTensor, np.ndarray], gamma: float = 0.9) -> Tuple[QFunction, SubPolicy]:
    """
    Policy iteration over the stream-selection MDP.

    Args:
        reward: RewardTensor or array (n, 2, n)
        gamma: Discount in [0, 1)

    Returns:
        (QFunction of the final policy, greedy SubPolicy)

    Raises:
        SolverError: Non-finite rewards or a singular evaluation system
    """
    r = reward.r if isinstance(reward, RewardTensor) else np.asarray(reward, dtype=float)
    if not np.all(np.isfinite(r)):
        raise SolverError("reward tensor has non-finite entries")
    n = r.shape[0]
    p = transition_model(n)
    rewards = expected_rewards(r, p)

    policy = SubPolicy(tuple([STAY] * n))
    for _ in range(MAX_POLICY_ITERATIONS):
        q = _evaluate(policy, rewards, p, gamma)
        improved = greedy(q)
        if improved == policy:
            return QFunction(q, gamma), policy
        policy = improved
    logger.warning(f"Policy iteration did not settle in {MAX_POLICY_ITERATIONS} rounds")
    return QFunction(q, gamma), greedy(q)


@dataclass
class EpsilonSchedule:
    """
    Decaying epsilon-greedy schedule.

    Attributes:
        initial: Starting epsilon (values above 1 act as 1)
        decay: Multiplier applied after every action
        stages: (threshold, multiplier) rules; below the threshold the multiplier
            replaces the decay, a None multiplier sets epsilon to zero
        epsilon: Current value
    """
    initial: float = 1.2
    decay: float = 0.999
    stages: List[Tuple[float, Optional[float]]] = field(default_factory=lambda: [(0.8, 0.95)])
    epsilon: Optional[float] = None

    def __post_init__(self):
        self.stages = sorted(((float(t), m) for t, m in self.stages), key=lambda s: -s[0])
        if self.epsilon is None:
            self.epsilon = self.initial

    @classmethod
    def from_spec(cls, spec: EpsilonSpec) -> "EpsilonSchedule":
        return cls(initial=spec.initial, decay=spec.decay, stages=[tuple(s) for s in spec.stages])

    @property
    def probability(self) -> float:
        return min(self.epsilon, 1.0)

    def step(self):
        multiplier = self.decay
        for threshold, stage_multiplier in self.stages:
            if self.epsilon < threshold and stage_multiplier is not None:
                multiplier = stage_multiplier
        self.epsilon *= multiplier
        for threshold, stage_multiplier in self.stages:
            if stage_multiplier is None and self.epsilon < threshold:
                self.epsilon = 0.0

    def reset(self):
        self.epsilon = self.initial


def select_action(policy: SubPolicy, state: int, schedule: EpsilonSchedule, rng: np.random.Generator) -> int:
    """
    Epsilon-greedy action; advances the schedule by one step.

    With probability min(epsilon, 1) a uniform random action, else policy[state].
    """
    if rng.random() < schedule.probability:
        action = int(rng.integers(len(ACTIONS)))
    else:
        action = policy[state]
    schedule.step()
    return action
