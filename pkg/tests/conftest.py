import numpy as np
import pytest

from thinflow.grid import Disk, build_cell


@pytest.fixture(scope="session")
def cell32():
    return build_cell(Disk(0.25), 0.5, 32)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
