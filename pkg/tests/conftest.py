import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def banana_cloud(rng, n):
    """Points in the banana target's typical set."""
    x1 = rng.normal(1.0, 1.2, size=n)
    x2 = x1 ** 2 + rng.normal(0.0, 0.01, size=n)
    return np.column_stack([x1, x2])
