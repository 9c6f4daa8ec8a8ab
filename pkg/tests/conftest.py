import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dsgrl import kernels

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = kernels.get_backend(request.param)
    monkeypatch.setattr(kernels, "_impl", mod)
    return mod


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Append one summary line; the lines are printed at the end of the session."""
    def emit(line):
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
