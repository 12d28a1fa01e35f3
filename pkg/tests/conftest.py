"""Shared fixtures for the cardiora test suite."""

import numpy as np
import pytest

from src.back.constants import CLASS_INDEX, DESK_PREVALENCE, N_CLASSES
from src.back.model import ResNet1d, ResNetConfig
from src.back.synthgen import generate_dataset


@pytest.fixture
def rng():
    """Seeded generator; every test gets a fresh, identical stream."""
    return np.random.default_rng(1234)


@pytest.fixture
def mini_config():
    """Two blocks over 256 samples with 8 base filters."""
    return ResNetConfig(
        n_blocks=2, kernel_length=7, input_leads=12, input_samples=256,
        base_filters=8, filter_growth=8, subsample=4, dropout_rate=0.0,
    )


@pytest.fixture
def mini_model(mini_config):
    return ResNet1d.build(mini_config, np.random.default_rng(0))


@pytest.fixture(scope="session")
def desk_exams():
    """Sixteen synthetic exams at 10% prevalence per class."""
    return generate_dataset(16, DESK_PREVALENCE, seed=3, show_progress=False)


def one_hot(*names):
    """Six-flag vector with the named classes set."""
    wanted = {CLASS_INDEX[name] for name in names}
    return [i in wanted for i in range(N_CLASSES)]
