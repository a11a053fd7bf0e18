import numpy as np
import pytest

from fedbalance.data import generate_synthetic
from fedbalance.rng import RngStream


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(4, 25, (16, 16), 0.1, RngStream(7, "data"))


@pytest.fixture
def random_image():
    def make(seed=0, shape=(16, 16)):
        from fedbalance.data import Image

        return Image(np.random.default_rng(seed).random(shape))

    return make
