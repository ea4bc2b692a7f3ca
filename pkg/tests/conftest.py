import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

from safeswitch import model  # noqa: E402


@pytest.fixture(scope="session")
def small_system():
    return model.random_stable_system(3, 4, 2, 3, 0.95)


@pytest.fixture(scope="session")
def optimal_pair(small_system):
    primary = model.synth_optimal_controller(small_system)
    fallback = model.default_fallback(small_system)
    return small_system, primary, fallback
