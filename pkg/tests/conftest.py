import logging
import os

import pytest
from hypothesis import HealthCheck, settings

from smokeshift import synth

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_world():
    """A compact synthetic world shared by the slower module tests."""
    cfg = synth.SimConfig(seed=11, n_cbs=8, n_individuals_per_cb=150)
    return synth.simulate(cfg)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)
    yield
