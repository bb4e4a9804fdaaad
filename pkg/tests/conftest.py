"""
Configuration for pytest.

This module contains configuration for pytest, including fixtures and plugins.
"""

import logging
import time

import numpy as np
import pytest

from acmamba.core.cube import HsiCube
from acmamba.models.config import RunConfig, SceneSpec, TrainConfig

# Configure logging
logging.basicConfig(
    level=logging.DEBUG,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)


# Unmarked tests are expected to stay fast; acceptance runs carry the slow marker
SLOW_TEST_SECONDS = 25


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_protocol(item, nextitem):
    """Warn about tests not marked slow that take too long."""
    started = time.perf_counter()
    yield
    elapsed = time.perf_counter() - started
    if elapsed > SLOW_TEST_SECONDS and item.get_closest_marker("slow") is None:
        logging.warning(f"Test {item.nodeid} took {elapsed:.2f}s; consider marking it slow")


@pytest.fixture
def rng():
    """Seeded numpy generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_cube(rng):
    """Random 6x5x4 cube."""
    return HsiCube(rng.uniform(0.0, 1.0, size=(6, 5, 4)).astype(np.float32))


@pytest.fixture
def small_scene_spec():
    """A 24x24 scene that trains in a few seconds."""
    return SceneSpec(height=24, width=24, bands=8, n_anomalies=2, anomaly_fraction=0.02, seed=7)


@pytest.fixture
def tiny_train_config():
    """Small model, few epochs."""
    return TrainConfig(epochs=3, psi=16, hidden_dim=8, state_dim=4, eta=0.1, seed=3)


@pytest.fixture
def tiny_run_config(tmp_path, small_scene_spec, tiny_train_config):
    """End-to-end configuration writing into tmp_path."""
    return RunConfig(
        scene=small_scene_spec,
        train=tiny_train_config,
        output_dir=str(tmp_path / "out"),
    )
