import numpy as np
import pytest

from cabinloc.channel_sim import generate_dataset, get_profile
from cabinloc.geometry import generate_cabin


@pytest.fixture(scope="session")
def small_layout():
    return generate_cabin(rows=4, columns="ABCD", anchor_count=6, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_layout):
    return generate_dataset(small_layout, get_profile("aircraft"), repetitions=10, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
