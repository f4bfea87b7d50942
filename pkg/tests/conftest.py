"""Shared fixtures.

The acceptance dataset (30k rows, seed 20) is generated once per
session and reused by every test that needs realistic windows; the
small dataset keeps model unit tests quick.
"""
import json
import os

import pytest

from trackcast.ingest import SynthConfig, generate_synthetic, write_csv
from trackcast.preprocess import PreprocessConfig, run_preprocess

ACCEPT_SEED = 20
ACCEPT_ROWS = 30000
ACCEPT_WINDOW = 8
SWEEP_VARIANCE_THRESHOLD = 0.002  # sits between the calm bulk and burst tail of scaled window variances
FILTER_SEED = 11


@pytest.fixture(scope="session")
def acceptance_table():
    return generate_synthetic(SynthConfig(n_rows=ACCEPT_ROWS, seed=ACCEPT_SEED))


@pytest.fixture(scope="session")
def acceptance_split(acceptance_table):
    split, audit = run_preprocess(
        acceptance_table, PreprocessConfig(window_width=ACCEPT_WINDOW)
    )
    return split, audit


@pytest.fixture(scope="session")
def small_table():
    return generate_synthetic(
        SynthConfig(
            n_rows=3000,
            n_features=12,
            seed=7,
            constant_feature_count=2,
            irrelevant_feature_count=3,
        )
    )


@pytest.fixture(scope="session")
def small_split(small_table):
    split, _ = run_preprocess(small_table, PreprocessConfig(window_width=8))
    return split


@pytest.fixture(scope="session")
def acceptance_csv(acceptance_table, tmp_path_factory):
    path = tmp_path_factory.mktemp("accept") / "data.csv"
    write_csv(acceptance_table, path)
    return str(path)


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """Small CSV + config for CLI tests that do real runs."""
    root = tmp_path_factory.mktemp("cli")
    table = generate_synthetic(
        SynthConfig(
            n_rows=2500,
            n_features=12,
            seed=7,
            constant_feature_count=2,
            irrelevant_feature_count=3,
        )
    )
    data_path = root / "data.csv"
    write_csv(table, data_path)
    cfg = {
        "preprocess": {"window_width": 8},
        "model": {"models": ["lr"], "hidden_size": 6, "kernel_width": 3},
        "train": {"max_epochs": 2, "batch_size": 64, "seed": 5},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    return {"root": str(root), "data": str(data_path), "config": str(cfg_path), "config_dict": cfg}


def write_config(directory, body) -> str:
    path = os.path.join(str(directory), "config.json")
    with open(path, "w") as fh:
        json.dump(body, fh)
    return path
