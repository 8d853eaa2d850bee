import numpy as np
import pytest

from dmid.schedule import default_schedule
from dmid.synthetic import add_awgn, test_image_128


@pytest.fixture(scope="session")
def sched():
    return default_schedule()


@pytest.fixture(scope="session")
def corpus_image():
    return test_image_128()


@pytest.fixture(scope="session")
def corpus_noisy50(corpus_image):
    return add_awgn(corpus_image, 50.0, seed=42)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
