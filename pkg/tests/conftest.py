import os

import pytest
from hypothesis import HealthCheck, settings

from ccaccel.bench.config import ExperimentConfig
from ccaccel.memsim import MemorySystem
from ccaccel.simcore import Engine

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def engine():
    return Engine(seed=7)


@pytest.fixture
def mem(engine):
    return MemorySystem(engine, name="host")


@pytest.fixture
def base_cfg():
    return ExperimentConfig()
