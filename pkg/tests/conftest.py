import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")

SQRT2 = float(np.sqrt(2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def generic_cell():
    from rotaflow import elliptic

    return elliptic.solve_cell(elliptic.conductivity("generic", 0.5, 32))


def pytest_configure(config):
    os.environ.setdefault("ROTAFLOW_THREADS", "1")
