import numpy as np
import pytest

from nvpes import RateSet


@pytest.fixture
def rates():
    return RateSet()


@pytest.fixture
def decay_only():
    """Radiative decay alone: the analytically solvable one-jump model."""
    return RateSet(gamma0=63.0, gamma_f0=0.0, gamma_f1=0.0,
                   gamma_s0=0.0, gamma_s1=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
