# persistence.py
"""
persistence.py - Saving and loading trial artifacts

Layout of one run directory:

    trial_<seed>.csv          per-batch log of the trial
    freezes_<seed>.jsonl      one JSON object per freeze
    library_<seed>/
        manifest.json         ordered list of abstractions with their sub-policies
        abstraction_<k>.json  header + arrays of the k-th frozen abstraction
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.exceptions import MisfaError
from core.logger import get_logger
from core.models import AbstractionRecord, ObservationBatch, SubPolicy
from services.gating import AbstractionLibrary, FrozenAbstraction

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

PathLike = Union[str, Path]


def save_json(data: Any, path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)


def load_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_abstraction(abstraction: FrozenAbstraction, path: PathLike):
    """Write one frozen abstraction as JSON (header + flat arrays)"""
    save_json(abstraction.to_dict(), path)


def load_abstraction(path: PathLike) -> FrozenAbstraction:
    return FrozenAbstraction.from_dict(load_json(path))


def save_library(directory: PathLike, library: AbstractionLibrary, policies: Sequence[SubPolicy],
                 records: Optional[Sequence[AbstractionRecord]] = None) -> Path:
    """
    Persist an abstraction library with its sub-policies.

    Args:
        directory: Target directory (created if missing)
        library: Frozen abstractions in freeze order
        policies: Sub-policy of every abstraction
        records: Optional per-abstraction metadata

    Returns:
        Path of the written manifest
    """
    if len(policies) != len(library):
        raise ValueError(f"{len(policies)} policies for {len(library)} abstractions")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    entries = []
    for k, (phi, policy) in enumerate(zip(library, policies), start=1):
        name = f"abstraction_{k}.json"
        save_abstraction(phi, directory / name)
        entries.append({
            "file": name,
            "policy": policy.to_list(),
            "record": records[k - 1].to_dict() if records else None,
        })

    manifest = {"version": MANIFEST_VERSION, "band_width": library.band_width, "abstractions": entries}
    path = directory / MANIFEST_NAME
    save_json(manifest, path)
    logger.debug(f"Library of {len(library)} abstraction(s) saved to {directory}")
    return path


def load_library(directory: PathLike) -> Tuple[AbstractionLibrary, List[SubPolicy], List[Optional[AbstractionRecord]]]:
    """
    Load a library written by save_library.

    Raises:
        FileNotFoundError: No manifest in the directory
        MisfaError: Manifest is malformed or references missing files
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"library manifest not found: {manifest_path}")
    try:
        manifest = load_json(manifest_path)
        library = AbstractionLibrary(band_width=float(manifest["band_width"]))
        policies, records = [], []
        for entry in manifest["abstractions"]:
            library.append(load_abstraction(directory / entry["file"]))
            policies.append(SubPolicy(tuple(entry["policy"])))
            records.append(AbstractionRecord.from_dict(entry["record"]) if entry.get("record") else None)
    except (KeyError, TypeError, json.JSONDecodeError, OSError) as e:
        raise MisfaError(f"malformed library at {directory}: {e}") from e
    return library, policies, records


def write_trial_log(log: pd.DataFrame, path: PathLike):
    """Per-batch log as CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    log.to_csv(path, index=False)


def write_freeze_events(events: Iterable[Dict[str, Any]], path: PathLike):
    """One JSON object per line; an empty file when nothing froze"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for event in events:
            f.write(json.dumps(event, sort_keys=True) + "\n")


def read_freeze_events(path: PathLike) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def dump_batches_csv(batches: Sequence[ObservationBatch], path: PathLike):
    """
    Raw samples of some batches for debugging.

    Columns: t, stream, x_1 .. x_I (one row per sample)
    """
    if not batches:
        raise ValueError("no batches to dump")
    frames = []
    for batch in batches:
        df = pd.DataFrame(batch.samples, columns=[f"x_{i + 1}" for i in range(batch.input_dim)])
        df.insert(0, "stream", batch.stream)
        df.insert(0, "t", batch.start_time + np.arange(batch.tau))
        frames.append(df)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
