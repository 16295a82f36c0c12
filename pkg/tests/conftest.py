import numpy as np
import pytest

from kahlerlab.model import make_model


@pytest.fixture(scope="session")
def p1():
    return make_model("p1", 256)


@pytest.fixture(scope="session")
def torus():
    return make_model("torus", 32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
