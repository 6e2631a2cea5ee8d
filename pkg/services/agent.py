# agent.py
"""
agent.py - Control loop of the curiosity-driven abstraction learner

One iteration:
    select action (epsilon-greedy) -> environment step -> novelty check
    -> (novel and not constant) update the adaptive abstraction and its eta
       statistics -> window means of xi -> intrinsic reward
    -> (otherwise) fixed penalty -unlearnable_penalty * beta
    -> reward tensor update -> policy iteration
    -> convergence check once epsilon < freeze_epsilon -> (converged) freeze
       with a band calibrated on the encoded stream, save the sub-policy,
       reset epsilon, start a fresh abstraction

A trial repeats iterations until the abstraction cap is reached, every batch
has been filtered as known for `patience` iterations, or the budget runs out.
"""

import time
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.config import ExperimentConfig
from core.exceptions import BudgetExhaustedError, NonFiniteInputError
from core.logger import get_logger, log_freeze_event, log_trial_summary
from core.models import (
    AbstractionRecord,
    ObservationBatch,
    RewardParams,
    STAY,
    SubPolicy,
    NEW_OPTIMAL,
    OLD_OPTIMAL,
    classify_first_policy,
)
from services.cdrl import (
    EpsilonSchedule,
    RewardTensor,
    intrinsic_reward,
    legacy_update_10,
    select_action,
    solve_policy,
)
from services.gating import (
    AbstractionLibrary,
    EtaStats,
    converged,
    freeze,
    is_degenerate,
    is_novel,
    update_eta_stats,
)
from services.incsfa import AdaptiveAbstraction, WeightChangeTracker, window_means
from services.stream_env import (
    BlobScene,
    BlobSceneParams,
    StreamEnvironment,
    SwapSchedule,
    build_generator,
)

logger = get_logger(__name__)

ALL_LEARNED = "all-learned"
BUDGET = "budget"
DOMINANT_WINDOW = 20


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


def build_environment(config: ExperimentConfig, seed_seq: np.random.SeedSequence
                      ) -> Tuple[StreamEnvironment, Optional[SwapSchedule]]:
    """
    Create the stream environment and swap schedule of one trial.

    Args:
        config: Experiment config
        seed_seq: Seed sequence reserved for the environment

    Returns:
        (environment, swap schedule or None)
    """
    env_seq, scene_seq, noise_seq = seed_seq.spawn(3)
    scene = None
    if any(s.kind == "blob" for s in config.streams):
        scene = BlobScene(BlobSceneParams.from_spec(config.scene), np.random.default_rng(scene_seq))
    noise_seeds = [_seed_int(child) for child in noise_seq.spawn(config.n_streams + 1)]
    generators = [build_generator(spec, noise_seeds[i], scene) for i, spec in enumerate(config.streams)]

    swap = None
    if config.swap is not None:
        replacement = build_generator(config.swap.replacement, noise_seeds[-1], scene)
        swap = SwapSchedule(epsilon_c=config.swap.epsilon_c, target=config.swap.target, replacement=replacement)

    env = StreamEnvironment(generators, config.tau, np.random.default_rng(env_seq), clock=config.clock)
    return env, swap


@dataclass
class LearnedResult:
    """
    Result of one trial: the ordered abstractions and sub-policies.

    Attributes:
        library: Frozen abstractions in freeze order
        policies: Sub-policy saved with each abstraction
        records: Per-abstraction metadata
        termination: all-learned | budget
        iterations: Iterations executed
        log: Per-batch log, one row per iteration
        freeze_events: One dict per freeze
        final_policy: Greedy policy when the trial stopped
        flips: Greedy-policy flips after epsilon reached zero, before the first freeze
    """
    library: AbstractionLibrary
    policies: List[SubPolicy]
    records: List[AbstractionRecord]
    termination: str
    iterations: int
    log: pd.DataFrame
    freeze_events: List[Dict[str, Any]] = field(default_factory=list)
    final_policy: Optional[SubPolicy] = None
    flips: int = 0

    def __post_init__(self):
        if len(self.policies) != len(self.library):
            raise ValueError(f"{len(self.policies)} policies for {len(self.library)} abstractions")

    @property
    def first_policy(self) -> Optional[SubPolicy]:
        """Sub-policy of the first learning phase, saved or still in use"""
        return self.policies[0] if self.policies else self.final_policy


class CuriousAgent:
    """
    Agent state plus the per-iteration update.

    Owns the environment, the adaptive abstraction with its statistics and
    weight-change tracker, the abstraction library, the reward estimate,
    the epsilon schedule and the saved sub-policies.
    """

    def __init__(self, config: ExperimentConfig, seed: int):
        self.config = config
        self.seed = seed
        env_seq, policy_seq, init_seq = np.random.SeedSequence(seed).spawn(3)
        self.env, self.swap = build_environment(config, env_seq)
        self.rng = np.random.default_rng(policy_seq)
        self.init_rng = np.random.default_rng(init_seq)

        n = config.n_streams
        self.params = RewardParams(beta=config.resolved_beta(), sigma=config.sigma)
        self.library = AbstractionLibrary(band_width=config.band_width)
        self.reward = RewardTensor(n)
        self.legacy_table = np.zeros((n, 2, n))
        self.schedule = EpsilonSchedule.from_spec(config.epsilon)
        self.policy = SubPolicy(tuple([STAY] * n))
        self.q = np.zeros((n, 2))

        self.saved_policies: List[SubPolicy] = []
        self.records: List[AbstractionRecord] = []
        self.freeze_events: List[Dict[str, Any]] = []
        self.rows: List[Dict[str, Any]] = []

        self.iteration = 0
        self.budget = config.budget
        self.known_streak = 0
        self.flips = 0
        self._zero_eps_policy: Optional[SubPolicy] = None
        self._new_phase()

    # ----- phase management -----

    @property
    def u(self) -> int:
        """1-based index of the abstraction under learning"""
        return len(self.library) + 1

    @property
    def unlearnable_reward(self) -> float:
        """Reward of a batch that is already encoded or constant"""
        return -self.config.unlearnable_penalty * self.params.beta

    def _new_phase(self):
        cfg = self.config
        self.abstraction = AdaptiveAbstraction(
            cfg.input_dim, cfg.output_dim, cfg.whitening_dim, nu=cfg.nu,
            lateral_inhibition=cfg.lateral_inhibition, amnesic=cfg.amnesic,
            warmup=cfg.warmup, derivative_memory=cfg.derivative_memory, rng=self.init_rng,
        )
        self.stats = EtaStats(cfg.output_dim, rate=cfg.eta_rate, inst_rate=cfg.eta_inst_rate,
                              settle_batches=cfg.settle_batches)
        self.tracker = WeightChangeTracker(cfg.tau)
        self.phase_start = self.iteration
        self.recent_streams = deque(maxlen=DOMINANT_WINDOW)
        self.recent_batches = deque(maxlen=cfg.calibration_batches)
        self._fed_last = False

    def _dominant_stream(self) -> Optional[int]:
        if not self.recent_streams:
            return None
        counts = Counter(self.recent_streams)
        return max(sorted(counts), key=lambda s: counts[s])

    def _freeze(self):
        stream = self._dominant_stream()
        provenance = {"u": self.u, "iteration": self.iteration, "policy": self.policy.to_list(), "stream": stream}
        calibration = [samples for s, samples in self.recent_batches if s == stream]
        frozen = freeze(self.abstraction, self.stats, self.config.sd_floor, provenance,
                        calibration=calibration, sd_floor_ratio=self.config.sd_floor_ratio)
        record = AbstractionRecord(
            u=self.u,
            iteration=self.iteration,
            iterations_to_freeze=self.iteration - self.phase_start + 1,
            final_eta=[float(v) for v in np.nan_to_num(self.stats.eta)],
            eta_mean=frozen.eta_mean.tolist(),
            eta_sd=frozen.eta_sd.tolist(),
            stream=stream,
            policy=self.policy.to_list(),
        )
        log_freeze_event(logger, record.u, record.iteration, record.final_eta, record.eta_sd,
                         record.policy, stream)

        self.library.append(frozen)
        self.saved_policies.append(self.policy)
        self.records.append(record)
        self.freeze_events.append(record.to_dict())

        self.schedule.reset()
        if self.config.reward_reset == "on_freeze":
            self.reward.reset()
            self.legacy_table[:] = 0.0
            self.q = np.zeros_like(self.q)
            self.policy = SubPolicy(tuple([STAY] * self.config.n_streams))
        self._new_phase()

    # ----- one iteration -----

    def _learn(self, batch: ObservationBatch, action: int) -> Tuple[float, float, float]:
        """Feed a novel batch to the adaptive abstraction; returns (xi_mean, xi_dot, reward)"""
        continued = action == STAY and self._fed_last
        if not continued:
            self.abstraction.begin_segment()
        self.tracker.extend(self.abstraction.update_batch(batch.samples))
        self._fed_last = True
        self.recent_streams.append(batch.stream)
        self.recent_batches.append((batch.stream, batch.samples))

        if self.abstraction.is_warm:
            update_eta_stats(self.stats, self.abstraction.output(batch.samples))
            if not continued:
                self.stats.restart_settling()
        if not self.tracker.ready:
            return np.nan, np.nan, np.nan
        xi_mean, xi_dot = window_means(self.tracker)
        return xi_mean, xi_dot, intrinsic_reward(xi_mean, xi_dot, self.params)

    def _attribute(self, s: int, a: int, s_next: int, reward: float):
        if self.config.reward_mode == "legacy":
            self.legacy_table, normalized = legacy_update_10(
                self.legacy_table, s, a, s_next, reward, self.config.legacy_alpha)
            q, policy = solve_policy(normalized, self.config.gamma)
        else:
            self.reward.update(s, a, s_next, reward)
            q, policy = solve_policy(self.reward, self.config.gamma)
        self.q = q.q
        self.policy = policy

    def _track_flips(self):
        if self.schedule.epsilon > 0 or len(self.library) > 0:
            return
        if self._zero_eps_policy is not None and self.policy != self._zero_eps_policy:
            self.flips += 1
            logger.debug(f"Greedy policy flip at iteration {self.iteration}: "
                         f"{self._zero_eps_policy} -> {self.policy}")
        self._zero_eps_policy = self.policy

    def run_iteration(self) -> Dict[str, Any]:
        """
        Execute one full cycle of the control loop.

        Returns:
            The log row of this iteration

        Raises:
            BudgetExhaustedError: Budget already used up (state unchanged)
            NonFiniteInputError: The acquired batch contains NaN or inf
        """
        if self.iteration >= self.budget:
            raise BudgetExhaustedError(f"budget of {self.budget} iterations exhausted")

        swapped = self.env.apply_swap(self.swap, self.schedule.epsilon)
        s = self.env.state.current
        epsilon = self.schedule.epsilon
        a = select_action(self.policy, s, self.schedule, self.rng)
        batch = self.env.step(a)
        s_next = batch.stream
        if not batch.is_finite:
            raise NonFiniteInputError(f"batch from stream {s_next} at t={batch.start_time} is not finite")

        novel = is_novel(batch, self.library)
        degenerate = is_degenerate(batch)
        learnable = novel and not degenerate
        if learnable:
            xi_mean, xi_dot, reward = self._learn(batch, a)
            self.known_streak = 0
        else:
            # Encoded and constant streams offer nothing to learn; they earn a small penalty
            self._fed_last = False
            xi_mean, xi_dot, reward = 0.0, np.nan, self.unlearnable_reward
            self.known_streak += 1

        if not np.isnan(reward):
            self._attribute(s, a, s_next, reward)
        self._track_flips()

        row = self._log_row(s, a, s_next, epsilon, novel, reward, xi_mean, xi_dot, swapped)
        row["degenerate"] = degenerate
        frozen = (learnable and epsilon < self.config.freeze_epsilon and self.abstraction.is_warm
                  and converged(self.stats, self.config.delta))
        row["frozen"] = frozen
        self.rows.append(row)
        if frozen:
            self._freeze()
        self.iteration += 1
        return row

    def _log_row(self, s, a, s_next, epsilon, novel, reward, xi_mean, xi_dot, swapped) -> Dict[str, Any]:
        row = {
            "iteration": self.iteration,
            "u": self.u,
            "s": s,
            "a": a,
            "s_next": s_next,
            "epsilon": epsilon,
            "novel": novel,
            "reward": reward,
            "xi_mean": xi_mean,
            "xi_dot": xi_dot,
        }
        eta = self.stats.eta if self.stats.eta is not None else np.full(self.config.output_dim, np.nan)
        eta_dot = self.stats.eta_dot if self.stats.eta_dot is not None else np.full(self.config.output_dim, np.nan)
        for j in range(self.config.output_dim):
            row[f"eta_{j + 1}"] = float(eta[j])
            row[f"eta_dot_{j + 1}"] = float(eta_dot[j])
        row["policy"] = str(self.policy)
        if self.config.reward_mode == "legacy":
            idx = np.arange(self.config.n_streams)
            stay_rewards = self.legacy_table[idx, STAY, idx]
        else:
            stay_rewards = self.reward.stay_rewards()
        for i in range(self.config.n_streams):
            row[f"q_s{i + 1}_stay"] = float(self.q[i, 0])
            row[f"q_s{i + 1}_switch"] = float(self.q[i, 1])
            row[f"r_stay_s{i + 1}"] = float(stay_rewards[i])
        row["swap"] = swapped
        return row


def run_trial(config: ExperimentConfig, seed: int) -> LearnedResult:
    """
    Run iterations until all learnable structure is captured or the budget is hit.

    Args:
        config: Experiment config
        seed: Trial seed (all randomness derives from it)

    Returns:
        LearnedResult with the ordered library and sub-policies
    """
    started = time.time()
    agent = CuriousAgent(config, seed)
    cap = config.abstraction_cap
    logger.debug(f"Trial {seed}: streams {agent.env.labels}, start at stream {agent.env.state.current}")

    while True:
        if len(agent.library) >= cap or agent.known_streak >= config.patience:
            termination = ALL_LEARNED
            break
        if agent.iteration >= config.budget:
            termination = BUDGET
            break
        agent.run_iteration()

    log_trial_summary(logger, seed, len(agent.library), agent.iteration, termination, time.time() - started)
    return LearnedResult(
        library=agent.library,
        policies=list(agent.saved_policies),
        records=list(agent.records),
        termination=termination,
        iterations=agent.iteration,
        log=pd.DataFrame(agent.rows),
        freeze_events=list(agent.freeze_events),
        final_policy=agent.policy,
        flips=agent.flips,
    )


# ----- point-of-no-return estimation -----

def swap_optima(config: ExperimentConfig) -> Tuple[List[int], List[int]]:
    """
    (new optimal, old optimal) first sub-policies of a swap experiment.

    Before the swap the easiest stream among the others is the one right
    after the swapped slot; after it the swapped-in stream is easiest.
    """
    n = config.n_streams
    target = config.swap.target
    new = SubPolicy.stay_at(target, n).to_list()
    old = SubPolicy.stay_at((target + 1) % n, n).to_list()
    return new, old


def _majority(group: pd.DataFrame) -> str:
    new = int((group["outcome"] == NEW_OPTIMAL).sum())
    old = int((group["outcome"] == OLD_OPTIMAL).sum())
    return NEW_OPTIMAL if new > old else OLD_OPTIMAL


def estimate_epsilon_d(outcomes: pd.DataFrame, estimator: str = "midpoint") -> Tuple[Optional[float], pd.DataFrame]:
    """
    Point-of-no-return epsilon from per-trial swap outcomes.

    Args:
        outcomes: One row per trial with columns epsilon_c and outcome
        estimator: midpoint (of the majority flip) or interpolate (P(new) = 0.5 crossing)

    Returns:
        (epsilon_d or None when the grid misses one regime, per-point table)
    """
    points = []
    for eps_c, group in outcomes.groupby("epsilon_c", sort=True):
        points.append({
            "epsilon_c": float(eps_c),
            "trials": len(group),
            "new_optimal": int((group["outcome"] == NEW_OPTIMAL).sum()),
            "old_optimal": int((group["outcome"] == OLD_OPTIMAL).sum()),
            "other": int((~group["outcome"].isin([NEW_OPTIMAL, OLD_OPTIMAL])).sum()),
            "p_new": float((group["outcome"] == NEW_OPTIMAL).mean()),
            "majority": _majority(group),
        })
    table = pd.DataFrame(points).sort_values("epsilon_c", ascending=False).reset_index(drop=True)
    if table.empty:
        return None, table

    eps = table["epsilon_c"].to_numpy()
    if estimator == "interpolate":
        p = table["p_new"].to_numpy()
        for k in range(1, len(table)):
            if p[k - 1] >= 0.5 > p[k]:
                frac = (p[k - 1] - 0.5) / (p[k - 1] - p[k])
                return float(eps[k - 1] + frac * (eps[k] - eps[k - 1])), table
        return None, table

    majority = table["majority"].tolist()
    if majority[0] != NEW_OPTIMAL:
        return None, table
    for k in range(1, len(majority)):
        if majority[k] != NEW_OPTIMAL:
            return float((eps[k - 1] + eps[k]) / 2.0), table
    return None, table


TrialRunner = Callable[[ExperimentConfig, Sequence[int]], List[Dict[str, Any]]]


def _sequential_runner(config: ExperimentConfig, seeds: Sequence[int]) -> List[Dict[str, Any]]:
    new, old = swap_optima(config)
    rows = []
    for seed in seeds:
        result = run_trial(config, seed)
        first = result.first_policy.to_list() if result.first_policy is not None else None
        outcome = classify_first_policy(first, new, old)
        rows.append({"seed": seed, "outcome": outcome, "first_policy": first})
    return rows


def measure_epsilon_d(config: ExperimentConfig, grid: Sequence[float], trials: int,
                      runner: Optional[TrialRunner] = None
                      ) -> Tuple[Optional[float], pd.DataFrame, pd.DataFrame]:
    """
    Run swap trials over an epsilon_c grid and estimate epsilon_d.

    Each trial stops after its first frozen abstraction; the first sub-policy
    is classified as new-optimal, old-optimal or other.

    Args:
        config: Config with a swap schedule
        grid: epsilon_c values
        trials: Trials per grid point
        runner: Callable (config, seeds) -> rows with seed/outcome/first_policy

    Returns:
        (epsilon_d or None, per-point table, per-trial outcomes)
    """
    if config.swap is None:
        raise ValueError("measure_epsilon_d needs a config with a swap schedule")
    if not grid:
        raise ValueError("epsilon_c grid is empty")
    runner = runner or _sequential_runner
    seeds = [config.seed + k for k in range(trials)]

    rows = []
    for eps_c in grid:
        point_config = config.with_overrides(
            swap=dict(config.to_dict()["swap"], epsilon_c=float(eps_c)), max_abstractions=1)
        for row in runner(point_config, seeds):
            first = row.get("first_policy")
            policy = ",".join(str(a) for a in first) if first is not None else ""
            rows.append(dict(row, epsilon_c=float(eps_c), first_policy=policy))
    outcomes = pd.DataFrame(rows, columns=["epsilon_c", "seed", "outcome", "first_policy"])
    epsilon_d, table = estimate_epsilon_d(outcomes, config.estimator)
    if epsilon_d is None:
        logger.warning("epsilon_d out of grid: the grid does not contain both outcome regimes")
    return epsilon_d, table, outcomes


def run_iteration(agent: CuriousAgent) -> CuriousAgent:
    """Functional form of CuriousAgent.run_iteration"""
    agent.run_iteration()
    return agent
