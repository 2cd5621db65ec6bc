import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from occface.morphable import make_synthetic_model

settings.register_profile("occface", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("occface")

# wall-clock origin for the suite-runtime check in the acceptance tests
SUITE_START = time.perf_counter()


@pytest.fixture(scope="session")
def model():
    return make_synthetic_model(0)


@pytest.fixture(scope="session")
def small_model():
    # cheap enough for tests that render many times
    return make_synthetic_model(3, n_vertices=400, n_alpha=6, n_beta=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
