"""
Shared fixtures: the level-1 quarter-disk mesh, its mu = 10 operator and the spectral oracle.
"""

import numpy as np
import pytest

from app.services.fem import Coefficients, build_operator
from app.services.fracpow import SpectralSolver
from app.services.mesh import generate_quarter_disk
from app.services.sparse_linalg import generalized_eig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: reproductions of the published error tables (deselect with -m 'not slow')")


@pytest.fixture(scope="session")
def mesh1():
    return generate_quarter_disk(1)


@pytest.fixture(scope="session")
def mesh2():
    return generate_quarter_disk(2)


@pytest.fixture(scope="session")
def op10(mesh1):
    return build_operator(mesh1, Coefficients.robin_arc(10.0), delta=1.0)


@pytest.fixture(scope="session")
def oracle10(op10):
    return generalized_eig(op10.stiffness, op10.mass)


@pytest.fixture
def spectral10(oracle10):
    return SpectralSolver(oracle10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
