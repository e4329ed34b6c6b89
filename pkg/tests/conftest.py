"""Shared fixtures: the nominal halo orbit and its periodized reference."""

import numpy as np
import pytest

from halonmpc.dynamics import ThreeBodyParams
from halonmpc.orbits import periodize, shoot_halo

MU = 0.012
X0 = 0.9878
Z0_GUESS = 0.0290
YDOT0_GUESS = 0.8763


@pytest.fixture(scope="session")
def nominal_orbit():
    return shoot_halo(X0, Z0_GUESS, YDOT0_GUESS, MU)


@pytest.fixture(scope="session")
def nominal_reference(nominal_orbit):
    return periodize(nominal_orbit, 0.01)


@pytest.fixture(scope="session")
def circular_params():
    return ThreeBodyParams(mu=MU, e=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_states(rng, n, mu=MU):
    """States in a box around the secondary that stay clear of both primaries."""
    pos = rng.uniform([0.8, -0.2, -0.2], [1.2, 0.2, 0.2], size=(n, 3))
    moon = np.array([1.0 - mu, 0.0, 0.0])
    close = np.linalg.norm(pos - moon, axis=1) < 0.02
    pos[close] += np.array([0.0, 0.0, 0.05])
    vel = rng.uniform(-1.0, 1.0, size=(n, 3))
    return np.hstack([pos, vel])
