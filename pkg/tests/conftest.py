import numpy as np
import pytest
from hypothesis import settings

from hilbex.collision import CollisionBackend
from hilbex.velocity import build_grid

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def vgrid():
    return build_grid(6.0, 16)


@pytest.fixture(scope="session")
def wide_grid():
    """Wide velocity grid on which Maxwellian truncation is below 1e-15."""
    return build_grid(10.0, 32)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(5.0, 8)


@pytest.fixture(scope="session")
def bgk():
    return CollisionBackend()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
