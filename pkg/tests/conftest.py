import numpy as np
import pytest

from pahenet import modarith as ma
from pahenet import pahe


@pytest.fixture(scope="session")
def toy_params():
    return ma.toy_params(8)


@pytest.fixture(scope="session")
def small_params():
    return ma.toy_params(64)


@pytest.fixture(scope="session")
def full_params():
    return ma.table_params(18, 4096)


@pytest.fixture(scope="session")
def toy_key(toy_params):
    return pahe.keygen(toy_params, np.random.default_rng(11))


@pytest.fixture(scope="session")
def small_key(small_params):
    return pahe.keygen(small_params, np.random.default_rng(12))


@pytest.fixture(scope="session")
def full_key(full_params):
    return pahe.keygen(full_params, np.random.default_rng(13))
