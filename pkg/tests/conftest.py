import numpy as np
import pytest

from largebatch.config import Config


@pytest.fixture
def small_config():
    """A run that finishes in about a second."""
    return Config(
        seed=3,
        workers=2,
        b_local=16,
        epochs=4,
        layers=(16, 24, 16, 4),
        dataset_examples=1600,
        dataset_separation=4.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
