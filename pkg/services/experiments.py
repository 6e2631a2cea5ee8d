# experiments.py
"""
experiments.py - Scenario runners, parameter sweeps and library evaluation

Scenarios:
- stationary / pixel-surrogate: independent trials, ordered-outcome counts
- stability-compare: running-mean vs legacy reward rule, greedy-policy flips
- nonstationary-sweep: swap trials over the epsilon_c grid, point of no return
"""

import itertools
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.config import Config, ExperimentConfig, StreamSpec
from core.exceptions import ConfigError, DimensionMismatchError
from core.logger import get_logger
from core.models import TrialSummary
from services.agent import TrialRunner, measure_epsilon_d
from services.gating import eta_inst
from services.persistence import load_library
from services.result_processor import (
    aggregate,
    save_dataframes_to_excel,
    save_summary_json,
    summaries_to_dataframe,
    write_sweep_tables,
)
from services.stream_env import BlobScene, BlobSceneParams, build_generator
from services.trial_dispatcher import dispatch_trials

logger = get_logger(__name__)

PathLike = Union[str, Path]


def trial_seeds(config: ExperimentConfig, seed_offset: int = 0) -> List[int]:
    return [config.seed + seed_offset + k for k in range(config.trials)]


def dispatcher_runner(jobs: Optional[int], collected: Optional[List[TrialSummary]] = None) -> TrialRunner:
    """Trial runner for measure_epsilon_d backed by the worker pool"""

    def run(config: ExperimentConfig, seeds: Sequence[int]) -> List[Dict[str, Any]]:
        summaries = dispatch_trials(config, seeds, out_dir=None, jobs=jobs)
        if collected is not None:
            collected.extend(summaries)
        return [{"seed": s.seed, "outcome": s.outcome, "first_policy": s.first_policy}
                for s in summaries if not s.failed]

    return run


def _write_outputs(config: ExperimentConfig, summaries: Sequence[TrialSummary], stats: Dict[str, Any],
                   out_dir: Path):
    save_summary_json(stats, config, out_dir / "summary.json")
    if config.export_excel:
        save_dataframes_to_excel(out_dir / "summary.xlsx", summaries_to_dataframe(summaries), config, stats)


def run_experiment(config: ExperimentConfig, out_dir: Optional[PathLike] = None, seed_offset: int = 0,
                   jobs: Optional[int] = None) -> Tuple[Dict[str, Any], List[TrialSummary]]:
    """
    Run every trial of the configured scenario and write its artifacts.

    Args:
        config: Experiment config
        out_dir: Output directory (defaults to config.output_dir)
        seed_offset: Added to every trial seed
        jobs: Worker processes (defaults to config.jobs)

    Returns:
        (aggregate statistics, per-trial summaries)
    """
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = trial_seeds(config, seed_offset)
    Config.log_configuration(config)

    if config.scenario == "stability-compare":
        summaries = []
        for mode in Config.REWARD_MODES:
            logger.info(f"Reward rule: {mode}")
            mode_config = config.with_overrides(reward_mode=mode, max_abstractions=1)
            summaries += dispatch_trials(mode_config, seeds, out_dir / mode, jobs)
        stats = aggregate(summaries)

    elif config.scenario == "nonstationary-sweep":
        summaries = []
        epsilon_d, points, outcomes = measure_epsilon_d(
            config, config.epsilon_c_grid, config.trials, runner=_offset_runner(jobs, summaries, seed_offset))
        outcomes.to_csv(out_dir / "sweep_outcomes.csv", index=False)
        points.to_csv(out_dir / "epsilon_d.csv", index=False)
        stats = aggregate(summaries)
        stats["epsilon_d"] = epsilon_d

    else:
        summaries = dispatch_trials(config, seeds, out_dir, jobs)
        stats = aggregate(summaries)

    _write_outputs(config, summaries, stats, out_dir)
    return stats, summaries


def _offset_runner(jobs: Optional[int], collected: List[TrialSummary], seed_offset: int) -> TrialRunner:
    base = dispatcher_runner(jobs, collected)
    if not seed_offset:
        return base
    return lambda config, seeds: base(config, [s + seed_offset for s in seeds])


def parse_grid(items: Sequence[str]) -> Dict[str, List[float]]:
    """
    Parse axis=v1,v2,... items of the sweep command.

    Raises:
        ConfigError: Unknown axis, malformed item or empty value list
    """
    grid: Dict[str, List[float]] = {}
    for item in items:
        axis, sep, values = item.partition("=")
        axis = axis.strip()
        if not sep or axis not in Config.SWEEP_AXES:
            raise ConfigError(f"expected axis=v1,v2 with axis in {Config.SWEEP_AXES}, got {item!r}", field="grid")
        try:
            parsed = [float(v) for v in values.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"non-numeric value in {item!r}", field="grid") from e
        if not parsed:
            raise ConfigError(f"axis {axis} has no values", field="grid")
        grid[axis] = parsed
    return grid


def run_sweep(config: ExperimentConfig, grid: Dict[str, Sequence[float]], out_dir: Optional[PathLike] = None,
              seed_offset: int = 0, jobs: Optional[int] = None) -> pd.DataFrame:
    """
    Point of no return over the cross product of the swept parameters.

    The epsilon_c axis (or config.epsilon_c_grid) is the inner loop of every
    combination of the other axes.

    Args:
        config: Config with a swap schedule
        grid: axis -> values over epsilon_c, sigma, nu, tau

    Returns:
        One row per combination: sigma, nu, tau, epsilon_d

    Raises:
        ConfigError: Empty grid, empty axis or missing swap schedule
    """
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise ConfigError("sweep grid is empty", field="sweep")
    if config.swap is None:
        raise ConfigError("sweeps need a swap schedule", field="swap")
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    epsilon_c_grid = list(grid.get("epsilon_c", config.epsilon_c_grid))
    axes = [axis for axis in Config.SWEEP_AXES if axis in grid and axis != "epsilon_c"]
    logger.info(f"Sweep over {axes or ['epsilon_c']} with {len(epsilon_c_grid)} epsilon_c points "
                f"x {config.trials} trial(s)")

    rows, all_points, all_outcomes = [], [], []
    summaries: List[TrialSummary] = []
    for combo in itertools.product(*[grid[axis] for axis in axes]):
        overrides = {axis: (int(value) if axis == "tau" else float(value)) for axis, value in zip(axes, combo)}
        point_config = config.with_overrides(**overrides) if overrides else config
        logger.info(f"Sweep point {overrides or '(base config)'}")

        epsilon_d, points, outcomes = measure_epsilon_d(
            point_config, epsilon_c_grid, config.trials, runner=_offset_runner(jobs, summaries, seed_offset))
        tags = {"sigma": point_config.sigma, "nu": point_config.nu, "tau": point_config.tau}
        rows.append(dict(tags, epsilon_d=epsilon_d))
        all_points.append(points.assign(**tags))
        all_outcomes.append(outcomes.assign(**tags))

    sweep = pd.DataFrame(rows, columns=["sigma", "nu", "tau", "epsilon_d"])
    sweep.to_csv(out_dir / "sweep.csv", index=False)
    pd.concat(all_points, ignore_index=True).to_csv(out_dir / "epsilon_d.csv", index=False)
    pd.concat(all_outcomes, ignore_index=True).to_csv(out_dir / "sweep_outcomes.csv", index=False)
    write_sweep_tables(sweep, axes, out_dir)

    stats = aggregate(summaries)
    stats["sweep"] = sweep.to_dict("records")
    _write_outputs(config, summaries, stats, out_dir)
    return sweep


def evaluate_library(library_dir: PathLike, stream: StreamSpec, config: ExperimentConfig,
                     batches: int = 20, seed: int = 0) -> pd.DataFrame:
    """
    Run every frozen abstraction of a library on one stream.

    Args:
        library_dir: Directory with manifest.json
        stream: Stream to evaluate on
        config: Supplies tau and the blob scene geometry
        batches: Number of consecutive tau-sample batches
        seed: Seed of noise streams and of the blob scene

    Returns:
        One row per (abstraction, component): mean eta_inst, stored band,
        fraction of batches judged known, verdict, and the latent with the
        largest |corr| to the output (NaN without latents)

    Raises:
        DimensionMismatchError: Abstraction and stream dimensions differ
    """
    library, policies, _ = load_library(library_dir)
    scene = None
    if stream.kind == "blob":
        scene = BlobScene(BlobSceneParams.from_spec(config.scene), np.random.default_rng(seed))
    generator = build_generator(stream, seed, scene)

    blocks = [generator.block(k * config.tau, config.tau) for k in range(batches)]
    samples = np.vstack([b[0] for b in blocks])
    latents = None if blocks[0][1] is None else np.vstack([b[1] for b in blocks])

    rows = []
    for k, phi in enumerate(library, start=1):
        if phi.input_dim != generator.dim:
            raise DimensionMismatchError(
                f"abstraction {k} expects dimension {phi.input_dim}, stream {stream.label} has {generator.dim}")
        verdicts = [phi.knows(b[0], library.band_width) for b in blocks]
        known = float(np.mean(verdicts))
        etas = np.array([eta_inst(phi.output(b[0]))[0] for b in blocks])
        low, high = phi.band(library.band_width)
        outputs = phi.output(samples)

        for j in range(phi.output_dim):
            row = {
                "abstraction": k,
                "policy": str(policies[k - 1]),
                "component": j + 1,
                "eta_inst_mean": float(np.nanmean(etas[:, j])) if not np.all(np.isnan(etas[:, j])) else np.nan,
                "band_low": float(low[j]),
                "band_high": float(high[j]),
                "known_fraction": known,
                "verdict": "known" if known >= 0.5 else "novel",
                "latent": None,
                "corr": np.nan,
            }
            if latents is not None:
                frame = pd.DataFrame(np.column_stack([outputs[:, j], latents]))
                corr = frame.corr().iloc[0, 1:].abs()
                if corr.notna().any():
                    row["latent"] = int(corr.idxmax()) - 1
                    row["corr"] = float(corr.max())
            rows.append(row)
    return pd.DataFrame(rows)
