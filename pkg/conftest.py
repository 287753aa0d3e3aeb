"""
Shared pytest fixtures: tiny worlds, models and run configs.
"""
import os

import numpy as np
import pytest

from surfalign.data_processing.datagen import make_world
from surfalign.geometry.patching import patching_for
from surfalign.settings import RunConfig, SitConfig, WorldConfig

RUN_SLOW = os.environ.get("SURFALIGN_RUN_SLOW") == "1"


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="desk-scale run; set SURFALIGN_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def tiny_world_config(**updates):
    """Level-3 world small enough for unit tests (20 patches of 45 vertices)."""
    base = dict(num_subjects=5, num_movies=2, clips_per_movie=12, mesh_level=3, harmonic_order=4,
                concept_dim=6, video_tokens=4, video_dim=8, audio_tokens=5, audio_dim=6, seed=7)
    base.update(updates)
    return WorldConfig(**base)


def tiny_sit_config(**updates):
    base = dict(num_layers=2, num_heads=2, hidden_dim=16, mlp_dim=32, num_patches=20,
                frames_per_window=3, patch_vertex_count=45, decoder_layers=1)
    base.update(updates)
    return SitConfig(**base)


def tiny_run_config(output_dir, **updates):
    data = {
        'seed': 11,
        'output_dir': str(output_dir),
        'world': tiny_world_config().model_dump(),
        'model': tiny_sit_config().model_dump(),
        'mapper': {'clip_dim': 16},
        'pretrain': {'iterations': 3, 'batch_size': 4, 'log_every': 1, 'val_every': 2, 'val_windows': 8},
        'align': {'iterations': 3, 'batch_size': 8, 'log_every': 1, 'val_every': 2, 'experiment': 'E1'},
        'eval': {'eval_seeds': 2, 'ridge_lambdas': [1.0, 100.0],
                 'tasks': [{'direction': 'f->V', 'M': 8, 'mode': 'soft', 'trials': 50},
                           {'direction': 'V->f', 'M': 4, 'mode': 'hard', 'trials': 50}]},
        'lag': {'lags': [1, 3, 6, 10]},
    }
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return RunConfig.model_validate(data)


@pytest.fixture(scope="session")
def world_config():
    return tiny_world_config()


@pytest.fixture(scope="session")
def tiny_dataset(world_config):
    return make_world(world_config, threads=2)


@pytest.fixture(scope="session")
def sit_config():
    return tiny_sit_config()


@pytest.fixture(scope="session")
def patching():
    return patching_for(3, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def run_config(tmp_path):
    return tiny_run_config(tmp_path / "run")
