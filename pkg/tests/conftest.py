from dotenv import load_dotenv
load_dotenv()  # load .env before any test module-level code runs

import os  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from core.config import load_run_config  # noqa: E402
from core.data import gen_dataset, lock_unlabeled  # noqa: E402
from core.nnet import NetworkSpec  # noqa: E402

RUN_SLOW = os.environ.get("RUN_SLOW") == "1"

SMALL_DATASET = dict(height=16, width=16, grid=16, n_queries=16)


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="slow; set RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return NetworkSpec(layer_sizes=(3, 5, 4, 1), activations=("tanh", "tanh", "identity"), seed=3)


@pytest.fixture(scope="session")
def raw_samples():
    return gen_dataset(20, 0.5, seed=0, **SMALL_DATASET)


@pytest.fixture
def samples(raw_samples):
    return lock_unlabeled(raw_samples)


def small_config(output_dir, /, **overrides):
    base = {
        "dataset": {"n": 20, "labeled_fraction": 0.5, "height": 16, "width": 16, "grid": 16, "n_queries": 16},
        "network": {"hidden": [8], "feature_cells": 4},
        "warmup": {"epochs": 3, "batch_size": 4, "lr": 0.05, "decay_epochs": [2], "eval_every": 1},
        "semi": {"epochs": 2, "batch_size": 6, "lr": 0.02, "decay_epochs": []},
        "importance": {"n_batches": 2, "batch_size": 3},
        "ablation_epochs": 1,
        "output_dir": str(output_dir),
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return load_run_config(overrides=base)


@pytest.fixture
def cfg(tmp_path):
    return small_config(tmp_path)


@pytest.fixture
def make_cfg(tmp_path):
    return lambda **overrides: small_config(tmp_path, **overrides)
