import numpy as np
import pytest

from helpers import toy_two_class_dataset


@pytest.fixture(scope="session")
def toy_dataset():
    return toy_two_class_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
