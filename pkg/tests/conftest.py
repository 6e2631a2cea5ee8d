# conftest.py
"""Shared fixtures and hypothesis profiles"""

import os

os.environ.setdefault("CDMISFA_LOG_TO_FILE", "0")
os.environ.setdefault("CDMISFA_LOG_LEVEL", "WARNING")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from core.config import ExperimentConfig

settings.register_profile("default", max_examples=50, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=10, deadline=None)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))

np.seterr(all="warn")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    """Three oscillator streams with a short budget"""
    return ExperimentConfig(
        streams=ExperimentConfig.from_dict({"streams": ["x1", "x2", "x3"]}).streams,
        tau=20,
        warmup=10,
        budget=60,
        trials=2,
        patience=50,
        export_excel=False,
    )


@pytest.fixture
def swap_config():
    """Zero stream in slot 0, swapped for x1 once epsilon drops below 0.9"""
    return ExperimentConfig.from_dict({
        "scenario": "nonstationary-sweep",
        "streams": ["zero", "x2", "x3"],
        "swap": {"epsilon_c": 0.9, "target": 0, "replacement": "x1"},
        "tau": 20,
        "warmup": 10,
        "budget": 60,
        "trials": 2,
        "export_excel": False,
    })


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "results"
    path.mkdir()
    return path
