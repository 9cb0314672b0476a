"""Shared fixtures.

The expensive pieces (the default synthetic dataset and one full training
run on its train split) are session-scoped so the acceptance tests and the
metric tests can share a single fit.
"""

import numpy as np
import pytest

from cmjivnet.data import SyntheticSpec, generate_synthetic, split
from cmjivnet.training import TrainConfig, fit


def multivariate_r2(targets: np.ndarray, feats: np.ndarray) -> float:
    """Pooled R^2 of a least-squares linear map feats -> targets."""
    x = np.concatenate([feats, np.ones((feats.shape[0], 1))], axis=1)
    beta, *_ = np.linalg.lstsq(x, targets, rcond=None)
    resid = targets - x @ beta
    return float(1.0 - (resid ** 2).sum() / ((targets - targets.mean(0)) ** 2).sum())


@pytest.fixture(scope="session")
def default_dataset():
    return generate_synthetic(SyntheticSpec())


@pytest.fixture(scope="session")
def default_splits(default_dataset):
    return split(default_dataset, (0.875, 0.125), seed=42)


@pytest.fixture(scope="session")
def trained_checkpoint(default_splits, tmp_path_factory):
    """One full-scale fit at package defaults, shared by the slow
    acceptance criteria; returns (checkpoint, metrics csv path)."""
    train, _ = default_splits
    metrics = tmp_path_factory.mktemp("fit") / "metrics.csv"
    ckpt = fit(train, TrainConfig(seed=42), metrics_path=str(metrics))
    return ckpt, metrics


@pytest.fixture(scope="session")
def small_dataset():
    spec = SyntheticSpec(n_subjects=24, seed=7)
    return generate_synthetic(spec)
