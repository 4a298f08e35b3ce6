import numpy as np
import pytest

from rltrack.env import TrackingConfig, TrackingEnv
from rltrack.phantom import desk_phantom_spec, generate_phantom


@pytest.fixture(scope="session")
def phantom():
    return generate_phantom(desk_phantom_spec())


@pytest.fixture(scope="session")
def env(phantom):
    return TrackingEnv.from_phantom(phantom, TrackingConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """Recorder for the one-line-per-criterion acceptance report."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
