# trial_dispatcher.py
"""
trial_dispatcher.py - Runs seeded trials, inline or on a process pool

Each worker owns the whole state of its trial; the dispatcher only collects
TrialSummary objects. A trial that raises is logged with its traceback and
reported as failed instead of aborting the run.
"""

import asyncio
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Union

from core.config import ExperimentConfig
from core.logger import get_logger, log_exception
from core.models import (
    ORDERED,
    OTHER,
    TrialSummary,
    classify_first_policy,
)
from services.agent import LearnedResult, run_trial, swap_optima
from services.persistence import save_library, write_freeze_events, write_trial_log

logger = get_logger(__name__)


def is_ordered(result: LearnedResult) -> bool:
    """
    Encoded streams are distinct and increasing, and every saved sub-policy
    stays on the stream its abstraction encodes.
    """
    streams = [record.stream for record in result.records]
    if not streams or any(s is None for s in streams):
        return False
    if any(b <= a for a, b in zip(streams, streams[1:])):
        return False
    n = len(result.policies[0])
    return all(policy.to_list() == [0 if i == s else 1 for i in range(n)]
               for policy, s in zip(result.policies, streams))


def summarize_trial(config: ExperimentConfig, seed: int, result: LearnedResult, elapsed: float) -> TrialSummary:
    """Condense a LearnedResult into the per-trial summary used by the harness"""
    first = result.first_policy.to_list() if result.first_policy is not None else None
    if config.swap is not None:
        new, old = swap_optima(config)
        outcome = classify_first_policy(first, new, old)
    else:
        outcome = ORDERED if is_ordered(result) else OTHER
    return TrialSummary(
        seed=seed,
        policies=[p.to_list() for p in result.policies],
        abstraction_count=len(result.library),
        iterations_to_freeze=[r.iterations_to_freeze for r in result.records],
        final_eta=[r.final_eta for r in result.records],
        encoded_streams=[r.stream for r in result.records],
        termination=result.termination,
        iterations=result.iterations,
        outcome=outcome,
        first_policy=first,
        epsilon_c=config.swap.epsilon_c if config.swap is not None else None,
        reward_mode=config.reward_mode,
        flips=result.flips,
        elapsed=elapsed,
    )


def execute_trial(config: ExperimentConfig, seed: int, out_dir: Optional[Union[str, Path]] = None) -> TrialSummary:
    """
    Run one trial and write its artifacts.

    Module-level so process pools can pickle it.

    Args:
        config: Experiment config
        seed: Trial seed
        out_dir: Directory for trial_<seed>.csv, freezes_<seed>.jsonl and
            library_<seed>/ (nothing is written when None)
    """
    started = time.time()
    result = run_trial(config, seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_trial_log(result.log, out_dir / f"trial_{seed}.csv")
        write_freeze_events(result.freeze_events, out_dir / f"freezes_{seed}.jsonl")
        if len(result.library):
            save_library(out_dir / f"library_{seed}", result.library, result.policies, result.records)
    return summarize_trial(config, seed, result, time.time() - started)


def _failed(seed: int, error: BaseException, config: ExperimentConfig) -> TrialSummary:
    log_exception(logger, f"Trial {seed} failed", error)
    epsilon_c = config.swap.epsilon_c if config.swap is not None else None
    return TrialSummary.failure(seed, f"{type(error).__name__}: {error}",
                                epsilon_c=epsilon_c, reward_mode=config.reward_mode)


async def run_trials_async(config: ExperimentConfig, seeds: Sequence[int],
                           out_dir: Optional[Path], jobs: int) -> List[TrialSummary]:
    """
    Run trials on a process pool with at most `jobs` in flight.

    Returns:
        One TrialSummary per seed, in seed order
    """
    executor = ProcessPoolExecutor(max_workers=jobs)
    semaphore = asyncio.Semaphore(jobs)
    total = len(seeds)

    async def run_with_semaphore(seed: int, index: int) -> TrialSummary:
        async with semaphore:
            logger.debug(f"Processing trial {index}/{total} | seed {seed}")
            loop = asyncio.get_running_loop()
            return await loop.run_in_executor(executor, execute_trial, config, seed, out_dir)

    tasks = [run_with_semaphore(seed, i + 1) for i, seed in enumerate(seeds)]
    logger.info(f"Starting {total} trial(s) with max {jobs} concurrent workers...")
    try:
        results = await asyncio.gather(*tasks, return_exceptions=True)
    finally:
        executor.shutdown(wait=True)

    summaries = []
    for seed, result in zip(seeds, results):
        if isinstance(result, BaseException):
            summaries.append(_failed(seed, result, config))
        else:
            summaries.append(result)
    return summaries


def dispatch_trials(config: ExperimentConfig, seeds: Sequence[int],
                    out_dir: Optional[Union[str, Path]] = None, jobs: Optional[int] = None) -> List[TrialSummary]:
    """
    Run every seed of an experiment.

    Args:
        config: Experiment config
        seeds: Trial seeds
        out_dir: Artifact directory (None writes nothing)
        jobs: Worker processes (defaults to config.jobs; 1 runs inline)

    Returns:
        One TrialSummary per seed, in seed order
    """
    jobs = max(1, min(jobs or config.jobs, len(seeds) or 1))
    out_dir = Path(out_dir) if out_dir is not None else None

    if jobs == 1:
        summaries = []
        for i, seed in enumerate(seeds, start=1):
            logger.debug(f"Processing trial {i}/{len(seeds)} | seed {seed}")
            try:
                summaries.append(execute_trial(config, seed, out_dir))
            except KeyboardInterrupt:
                raise
            except Exception as e:
                summaries.append(_failed(seed, e, config))
    else:
        summaries = asyncio.run(run_trials_async(config, seeds, out_dir, jobs))

    failed = sum(s.failed for s in summaries)
    if failed:
        logger.warning(f"{failed}/{len(summaries)} trial(s) failed")
    logger.info(f"{len(summaries) - failed}/{len(summaries)} trial(s) completed")
    return summaries
