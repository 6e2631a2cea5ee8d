# result_processor.py
"""
result_processor.py - Aggregation and emission of experiment results

Turns TrialSummary lists into pandas DataFrames, prints colored summaries,
and writes summary.json, the sweep tables (table1.csv, table2.csv) and the
optional Excel workbook.
"""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from colorama import Fore

from core.config import ExperimentConfig
from core.logger import get_logger
from core.models import OUTCOMES, TrialSummary

logger = get_logger(__name__)

# Published epsilon_d values, kept next to measurements for comparison
TABLE1_REFERENCE = {0.008: 0.8933, 0.003: 0.8775, 0.0009: 0.7211, 0.0001: 0.6517, 0.0: 0.6483}
TABLE2_REFERENCE = {
    "nu": {0.02: 0.78, 0.03: 0.80, 0.04: 0.79, 0.05: 0.81},
    "tau": {10: 0.98, 30: 0.81, 50: 0.83, 100: 0.80},
}
TAU_OUTLIER = 10

TRIAL_COLUMNS = [
    "seed", "outcome", "abstraction_count", "termination", "iterations",
    "policies", "encoded_streams", "iterations_to_freeze", "first_policy",
    "epsilon_c", "reward_mode", "flips", "elapsed", "failed", "error",
]


def _reference(table: Dict[float, float], value: float) -> Optional[float]:
    for key, ref in table.items():
        if np.isclose(key, value, rtol=0, atol=1e-12):
            return ref
    return None


def _policy_string(policies: Sequence[Sequence[int]]) -> str:
    return "|".join(",".join(str(a) for a in p) for p in policies)


def _counts(values: Sequence[str]) -> Dict[str, int]:
    counts = pd.Series(list(values), dtype=object).value_counts().sort_index()
    return {str(k): int(v) for k, v in counts.items()}


def summaries_to_dataframe(summaries: Sequence[TrialSummary]) -> pd.DataFrame:
    """One row per trial with list fields flattened to strings"""
    rows = []
    for s in summaries:
        rows.append({
            "seed": s.seed,
            "outcome": s.outcome,
            "abstraction_count": s.abstraction_count,
            "termination": s.termination,
            "iterations": s.iterations,
            "policies": _policy_string(s.policies),
            "encoded_streams": ",".join("" if v is None else str(v) for v in s.encoded_streams),
            "iterations_to_freeze": ",".join(str(v) for v in s.iterations_to_freeze),
            "first_policy": "" if s.first_policy is None else ",".join(str(a) for a in s.first_policy),
            "epsilon_c": s.epsilon_c,
            "reward_mode": s.reward_mode,
            "flips": s.flips,
            "elapsed": s.elapsed,
            "failed": s.failed,
            "error": s.error,
        })
    return pd.DataFrame(rows, columns=TRIAL_COLUMNS)


def aggregate(summaries: Sequence[TrialSummary]) -> Dict[str, Any]:
    """
    Cross-trial statistics of finished trials.

    Returns:
        Dictionary with counts per outcome/termination/policy set, the mean and
        SD of the abstraction count, iterations-to-freeze per abstraction index,
        and flip statistics per reward mode
    """
    done = [s for s in summaries if not s.failed]
    result: Dict[str, Any] = {
        "trials": len(summaries),
        "failed": len(summaries) - len(done),
        "outcomes": {o: sum(s.outcome == o for s in done) for o in OUTCOMES},
        "terminations": _counts([s.termination for s in done]),
        "policy_sets": _counts([_policy_string(s.policies) for s in done]),
    }
    if not done:
        return result

    counts = np.array([s.abstraction_count for s in done], dtype=float)
    result["abstraction_count"] = {"mean": float(counts.mean()), "sd": float(counts.std())}

    depth = max(s.abstraction_count for s in done)
    per_u = []
    for u in range(depth):
        values = np.array([s.iterations_to_freeze[u] for s in done if len(s.iterations_to_freeze) > u], dtype=float)
        per_u.append({"u": u + 1, "trials": len(values), "mean": float(values.mean()), "sd": float(values.std())})
    result["iterations_to_freeze"] = per_u

    modes = sorted({s.reward_mode for s in done if s.reward_mode and s.flips is not None})
    if modes:
        result["flips"] = {}
        for mode in modes:
            flips = np.array([s.flips for s in done if s.reward_mode == mode], dtype=float)
            result["flips"][mode] = {
                "trials": len(flips),
                "with_flips": int((flips > 0).sum()),
                "mean": float(flips.mean()),
            }
    return result


def display_summary(stats: Dict[str, Any], title: str = "Experiment Summary"):
    """Print the aggregate with colorama colors"""
    print(f"\n{Fore.MAGENTA}{'=' * 60}")
    print(f"{Fore.MAGENTA}{title}")
    print(f"{Fore.MAGENTA}{'=' * 60}\n")

    print(f"{Fore.CYAN}Trials:")
    print(f"{Fore.WHITE}  - Total: {stats['trials']}")
    colour = Fore.RED if stats["failed"] else Fore.WHITE
    print(f"{colour}  - Failed: {stats['failed']}")

    print(f"\n{Fore.CYAN}Outcomes:")
    for outcome, count in stats["outcomes"].items():
        if count:
            print(f"{Fore.WHITE}  - {outcome}: {count}")

    if "abstraction_count" in stats:
        ac = stats["abstraction_count"]
        print(f"\n{Fore.CYAN}Abstractions:")
        print(f"{Fore.WHITE}  - Count: {ac['mean']:.2f} +/- {ac['sd']:.2f}")
        for entry in stats.get("iterations_to_freeze", []):
            print(f"{Fore.WHITE}  - u={entry['u']}: {entry['mean']:.1f} +/- {entry['sd']:.1f} iterations "
                  f"({entry['trials']} trials)")

    if stats.get("policy_sets"):
        print(f"\n{Fore.CYAN}Sub-policy sets:")
        for policies, count in sorted(stats["policy_sets"].items(), key=lambda kv: -kv[1])[:5]:
            print(f"{Fore.WHITE}  - {policies or '(none)'}: {count}")

    for mode, flips in stats.get("flips", {}).items():
        print(f"{Fore.WHITE}  - Flips [{mode}]: {flips['with_flips']}/{flips['trials']} trials, "
              f"mean {flips['mean']:.2f}")

    if "epsilon_d" in stats:
        eps_d = stats["epsilon_d"]
        text = "out of grid" if eps_d is None else f"{eps_d:.4f}"
        print(f"\n{Fore.CYAN}Point of no return: {Fore.WHITE}{text}")


def save_summary_json(stats: Dict[str, Any], config: ExperimentConfig, path: Union[str, Path]):
    """summary.json with the aggregate and the effective config"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "created": datetime.now().isoformat(timespec="seconds"),
        "scenario": config.scenario,
        "config": config.to_dict(),
        "summary": stats,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, default=_json_default)
    logger.info(f"Summary saved to: {path}")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def build_table1(sweep: pd.DataFrame) -> pd.DataFrame:
    """epsilon_d against sigma, with the published values"""
    table = (sweep.groupby("sigma", as_index=False)["epsilon_d"].mean()
             .sort_values("sigma", ascending=False).reset_index(drop=True))
    table["reference"] = [_reference(TABLE1_REFERENCE, v) for v in table["sigma"]]
    return table[["sigma", "epsilon_d", "reference"]]


def build_table2(sweep: pd.DataFrame, axes: Sequence[str]) -> pd.DataFrame:
    """
    epsilon_d against nu and tau; other swept axes are averaged out.

    Rows with tau <= 10 carry flag = "tau-outlier".
    """
    frames = []
    for axis in axes:
        part = sweep.groupby(axis, as_index=False)["epsilon_d"].mean().sort_values(axis)
        part = part.rename(columns={axis: "value"})
        part.insert(0, "parameter", axis)
        part["reference"] = [_reference(TABLE2_REFERENCE[axis], v) for v in part["value"]]
        part["flag"] = ["tau-outlier" if axis == "tau" and v <= TAU_OUTLIER else "" for v in part["value"]]
        frames.append(part)
    return pd.concat(frames, ignore_index=True)[["parameter", "value", "epsilon_d", "reference", "flag"]]


def write_sweep_tables(sweep: pd.DataFrame, axes: Sequence[str], out_dir: Union[str, Path]) -> List[Path]:
    """
    Write table1.csv (sigma axis) and table2.csv (nu/tau axes) when swept.

    Returns:
        Paths of the files written
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "sigma" in axes:
        path = out_dir / "table1.csv"
        build_table1(sweep).to_csv(path, index=False)
        written.append(path)
    table2_axes = [a for a in ("nu", "tau") if a in axes]
    if table2_axes:
        path = out_dir / "table2.csv"
        build_table2(sweep, table2_axes).to_csv(path, index=False)
        written.append(path)
    for path in written:
        logger.info(f"Table saved to: {path}")
    return written


def save_dataframes_to_excel(filepath: Union[str, Path], trials: pd.DataFrame, config: ExperimentConfig,
                             stats: Dict[str, Any]) -> bool:
    """Save trials, parameters and summary metrics to an Excel workbook"""
    try:
        with pd.ExcelWriter(filepath, engine="openpyxl") as writer:
            trials.to_excel(writer, sheet_name="Trials", index=False)

            params = [[key, json.dumps(value) if isinstance(value, (dict, list)) else value]
                      for key, value in config.to_dict().items()]
            pd.DataFrame(params, columns=["Parameter", "Value"]).to_excel(
                writer, sheet_name="Parameters", index=False)

            metrics = [
                ["Total Trials", stats["trials"]],
                ["Failed Trials", stats["failed"]],
            ]
            metrics += [[f"Outcome {o}", c] for o, c in stats["outcomes"].items()]
            if "abstraction_count" in stats:
                metrics.append(["Mean Abstractions", stats["abstraction_count"]["mean"]])
            for entry in stats.get("iterations_to_freeze", []):
                metrics.append([f"Mean Iterations To Freeze u={entry['u']}", entry["mean"]])
            if "epsilon_d" in stats:
                metrics.append(["Epsilon d", stats["epsilon_d"]])
            pd.DataFrame(metrics, columns=["Metric", "Value"]).to_excel(writer, sheet_name="Summary", index=False)

        print(f"{Fore.GREEN}[+] DataFrames saved to: {filepath}")
        print(f"{Fore.WHITE}  - Sheets: Trials, Parameters, Summary")
        return True

    except Exception as e:
        logger.error(f"Error saving to Excel: {e}")
        return False
