import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aflab.bundle import EXAMPLES

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def sym2():
    return EXAMPLES["SYM2"]


@pytest.fixture
def asym():
    return EXAMPLES["ASYM"]


@pytest.fixture
def sym3():
    return EXAMPLES["SYM3"]


@pytest.fixture
def tor():
    return EXAMPLES["TOR"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
