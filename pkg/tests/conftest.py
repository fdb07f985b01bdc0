import numpy as np
import pytest

from ccsim.potmodel import synthetic
from ccsim.trajectory import AMU, CollisionGeometry

SYN_MU = 3.5036 * AMU


@pytest.fixture(scope="session")
def syn5():
    return synthetic(5, 7)


@pytest.fixture(scope="session")
def geom5():
    return CollisionGeometry(0.5, 1.0, SYN_MU)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
