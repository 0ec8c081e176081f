import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fuelgame import BoundarySolution, CostFunction  # noqa: E402


@functools.lru_cache(maxsize=None)
def quad_boundary(n_players, alpha, y_max=10.0):
    return BoundarySolution(CostFunction.quadratic(), n_players, alpha, y_max)


@pytest.fixture(scope="session")
def b2():
    return quad_boundary(2, 1.0)


@pytest.fixture(scope="session")
def b3():
    return quad_boundary(3, 1.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
