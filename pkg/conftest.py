import numpy as np
import pytest

from src.core.schedule import make_linear_schedule
from src.utils.logger import Logger


@pytest.fixture
def logger():
    log = Logger(quiet=True)
    yield log
    log.close()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_schedule():
    return make_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def short_schedule():
    return make_linear_schedule(50, 1e-3, 0.2)
