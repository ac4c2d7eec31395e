import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from svpl import dgp
from svpl.core import Rng

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_ds():
    return dgp.generate(dgp.SyntheticConfig(n=1500), Rng(11))


@pytest.fixture(scope="session")
def big_ds():
    return dgp.generate(dgp.SyntheticConfig(n=6000), Rng(12))


@pytest.fixture
def gen():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
