"""
Pytest configuration and fixtures for GOLD testing.

This module provides tiny configurations, prototype libraries, scene sets
and models shared by the test modules. Everything is sized so that a full
forward pass runs in milliseconds on a CPU.
"""

import os
import sys

import pytest
import torch

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from gold_ocl.config import GoldConfig
from gold_ocl.model import build_model
from gold_ocl.scenegen import generate_dataset, library_from_config


TINY_CONFIG = {
    "scene": {
        "canvas_size": 16,
        "num_prototypes": 3,
        "min_objects": 1,
        "max_objects": 2,
        "sprite_radius": 0.2,
        "train_size": 6,
        "test_size": 4,
    },
    "codec": {
        "image_size": 16,
        "patch_size": 4,
        "feature_size": 8,
        "hidden_channels": 8,
        "encoder_blocks": 1,
    },
    "dsa": {
        "num_slots": 3,
        "num_prototypes": 3,
        "iterations": 2,
        "ext_size": 4,
        "int_size": 4,
    },
    "model": {
        "bck_size": 2,
        "mlp_hidden_size": 16,
        "decoder_hidden_size": 16,
    },
    "train": {
        "codec_pretrain_steps": 2,
        "stage1_steps": 3,
        "stage2_steps": 2,
        "batch_size": 2,
        "warmup_steps": 2,
        "decay_every": 100,
        "log_every": 1,
    },
    "eval": {"runs": 2, "batch_size": 4},
}


def make_tiny_config(**sections) -> GoldConfig:
    """Tiny configuration, with per-section overrides as keyword dictionaries."""
    data = {name: dict(values) for name, values in TINY_CONFIG.items()}
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return GoldConfig.from_dict(data)


# Pytest configuration
def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "unit: mark test as a unit test"
    )
    config.addinivalue_line(
        "markers", "integration: mark test as an integration test"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
    config.addinivalue_line(
        "markers", "reproduction: mark test as a full-schedule desk run"
    )


@pytest.fixture
def tiny_config():
    """Provide a complete tiny configuration."""
    return make_tiny_config()


@pytest.fixture
def tiny_library(tiny_config):
    """Provide the prototype library of the tiny configuration."""
    return library_from_config(tiny_config.scene)


@pytest.fixture
def tiny_samples(tiny_config, tiny_library):
    """Provide a handful of tiny training scenes."""
    return generate_dataset(tiny_library, tiny_config.scene, tiny_config.scene.train_size, 0)


@pytest.fixture
def tiny_test_samples(tiny_config, tiny_library):
    """Provide a handful of tiny held-out scenes."""
    return generate_dataset(tiny_library, tiny_config.scene, tiny_config.scene.test_size, 1)


@pytest.fixture(params=["full", "no_dsa", "no_glo"])
def variant(request):
    """Iterate over every model variant."""
    return request.param


@pytest.fixture
def tiny_model(tiny_config):
    """Provide a freshly initialized full model in evaluation mode."""
    model = build_model(tiny_config, "full", seed=0)
    model.eval()
    return model


@pytest.fixture
def generator():
    """Provide a seeded CPU generator."""
    return torch.Generator().manual_seed(1234)
