"""Shared fixtures: tiny synthetic datasets, small model configs, seeded generators."""

import os
import sys
from pathlib import Path

# Decoded-image caching would leak state between tests
os.environ.setdefault("GSMO_DECODE_CACHE_ENABLED", "false")

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from core.models import HeadKind  # noqa: E402
from core.schemas import (  # noqa: E402
    BackboneConfig,
    DatasetConfig,
    ExperimentConfig,
    ModelConfig,
    SplitSpec,
    SyntheticSpec,
    TrainConfig,
)
from data.dataset_loader import load_dataset  # noqa: E402
from data.synthetic import write_synthetic  # noqa: E402
from model.network import init_model  # noqa: E402
from storage.cache import DecodeCache  # noqa: E402

TINY_EXTENT = 16


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (need --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def no_cache():
    return DecodeCache(enabled=False)


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(species=2, diseases=2, images_per_pair=5, extent=TINY_EXTENT, seed=3)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(
        backbone=BackboneConfig(extent=TINY_EXTENT, channels=[4, 4, 4, 4], kernel=3),
        branch_width=8,
    )


@pytest.fixture
def tiny_manifest(tmp_path, tiny_spec):
    manifest, _ = write_synthetic(tiny_spec, tmp_path / "synthetic")
    return manifest


@pytest.fixture
def tiny_dataset(tiny_manifest, no_cache):
    return load_dataset(tiny_manifest, TINY_EXTENT, cache=no_cache)


@pytest.fixture
def tiny_config(tmp_path, tiny_spec, tiny_model_config):
    return ExperimentConfig(
        dataset=DatasetConfig(root=str(tmp_path / "synthetic"), synthetic=tiny_spec),
        split=SplitSpec(train=0.6, val=0.2, test=0.2, seed=0),
        model=tiny_model_config,
        train=TrainConfig(max_epochs=2, patience=5, batch_size=8, repeats=1, seed=0),
        output_dir=str(tmp_path / "runs"),
    )


@pytest.fixture
def gsmo_model(tiny_dataset, tiny_model_config):
    return init_model(HeadKind.GSMO, tiny_model_config, tiny_dataset.spaces, seed=7)
