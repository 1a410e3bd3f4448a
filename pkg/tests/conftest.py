import numpy as np
import pytest

from klab.mesh import sphere, surgery, torus, torus_loop_plan


@pytest.fixture(scope="session")
def t8():
    return torus(8)


@pytest.fixture(scope="session")
def s8():
    return sphere(8)


@pytest.fixture(scope="session")
def surgered_t8():
    t = torus(8)
    return surgery(t, torus_loop_plan(t))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
