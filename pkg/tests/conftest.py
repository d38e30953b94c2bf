"""Pytest configuration and fixtures for purilab tests."""

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pytest
import yaml

from purilab.backend.utilities import AttackConfig, PurifierHyper, SyntheticSpec, TargetConfig
from purilab.data import LabeledDataset, allocate, generate_synthetic
from purilab.nn_core import init_network, mlp_specs
from purilab.target import Oracle, train_target

# Use non-interactive backend for testing
matplotlib.use("Agg")


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec() -> SyntheticSpec:
    """Four well-separated classes over 12 binary features."""
    return SyntheticSpec(
        num_classes=4, feature_dim=12, samples_per_class=45, prototype_density=0.5, flip_noise=0.1, seed=3
    )


@pytest.fixture
def tiny_dataset(tiny_spec) -> LabeledDataset:
    """180 samples drawn from ``tiny_spec``."""
    return generate_synthetic(tiny_spec)


@pytest.fixture
def tiny_splits(tiny_dataset):
    """Equal thirds of ``tiny_dataset`` with half-sized attacker subsets."""
    return allocate(tiny_dataset, seed=7)


@pytest.fixture
def tiny_target_cfg() -> TargetConfig:
    """A small, quick target architecture."""
    return TargetConfig(hidden_dims=(32,), activation="tanh", epochs=30, batch_size=16, learning_rate=0.01, seed=7)


@pytest.fixture
def tiny_target(tiny_splits, tiny_target_cfg):
    """A target classifier trained on the tiny D1."""
    return train_target(tiny_splits.train, tiny_target_cfg)


@pytest.fixture
def tiny_oracle(tiny_target) -> Oracle:
    """Undefended oracle around ``tiny_target``."""
    return Oracle(tiny_target)


@pytest.fixture
def tiny_attack_cfg() -> AttackConfig:
    """Attack settings small enough for unit tests."""
    return AttackConfig(
        attack_hidden=8,
        epochs=3,
        batch_size=16,
        nsh_epochs=3,
        inversion_epochs=3,
        inversion_batch_size=16,
        log_every=0,
    )


@pytest.fixture
def tiny_hyper() -> PurifierHyper:
    """Base-mode purifier schedule for unit tests."""
    return PurifierHyper(lam=1.0, mode="base", epochs=3, batch_size=16, lr_generator=0.01, log_every=0)


@pytest.fixture
def small_net():
    """Two-layer tanh/softmax network on 5 inputs and 3 classes."""
    return init_network(mlp_specs([5, 7, 3], "tanh", "softmax"), seed=11)


@pytest.fixture
def simplex_rows(rng) -> np.ndarray:
    """Ten random confidence vectors over four classes."""
    raw = rng.random((10, 4)) + 0.05
    return raw / raw.sum(axis=1, keepdims=True)


@pytest.fixture(autouse=True)
def cleanup_plots():
    """Automatically close all matplotlib figures after each test."""
    yield
    plt.close("all")


@pytest.fixture
def experiment_dict(tmp_path) -> dict:
    """A complete experiment small enough to run end to end in seconds."""
    return {
        "seeds": [1],
        "name": "tiny",
        "dataset": {"num_classes": 4, "feature_dim": 12, "samples_per_class": 30, "flip_noise": 0.1, "seed": 3},
        "target": {"hidden_dims": [16], "epochs": 5, "batch_size": 16, "learning_rate": 0.01, "log_every": 0},
        "attack": {
            "attack_hidden": 8,
            "epochs": 2,
            "batch_size": 16,
            "nsh_epochs": 2,
            "inversion_epochs": 2,
            "inversion_batch_size": 32,
            "log_every": 0,
        },
        "defenses": [
            {"kind": "none"},
            {"kind": "one_hot"},
            {"kind": "purifier", "purifier": {"mode": "base", "epochs": 2, "batch_size": 16, "log_every": 0}},
        ],
        "output_dir": str(tmp_path / "runs"),
        "histogram_bins": 10,
    }


@pytest.fixture
def experiment_yaml(tmp_path, experiment_dict):
    """``experiment_dict`` written to ``tmp_path/experiment.yaml``."""
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(experiment_dict))
    return path
