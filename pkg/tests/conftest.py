import numpy as np
import pytest
from hypothesis import settings

from dectdc.env import make_env
from dectdc.network import build_fully_connected, build_ring
from dectdc.tdc import fixed_point_for

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def env():
    return make_env(1)


@pytest.fixture(scope="session")
def fp(env):
    return fixed_point_for(env)


@pytest.fixture(scope="session")
def full():
    return build_fully_connected(10)


@pytest.fixture(scope="session")
def ring():
    return build_ring(10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed at the end of the run."""
    def record(key: str, name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {key}: {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
