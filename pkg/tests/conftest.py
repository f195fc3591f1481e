"""Shared fixtures: the 2-state unstable benchmark system and its GP prior."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lodempc import Hyperparams, LinearSystem, build_prior

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def unstable_system():
    # ẋ1 = x2, ẋ2 = x1 + x2 + u — dominant eigenvalue (1+sqrt(5))/2 > 0
    return LinearSystem(A=[[0.0, 1.0], [1.0, 1.0]], B=[[0.0], [1.0]])


@pytest.fixture(scope="session")
def unstable_prior(unstable_system):
    return build_prior(unstable_system, x_ref=[0.0, 0.0])


@pytest.fixture(scope="session")
def unit_hp():
    return Hyperparams(signal_variance=1.0, lengthscale_sq=1.0)
