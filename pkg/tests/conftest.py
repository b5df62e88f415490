import logging

import numpy as np
import pytest

from hgpabc.base_grid import BaseDensity, build_grid
from hgpabc.splines import basis_for_grid


@pytest.fixture
def unit_base():
    return BaseDensity.uniform(0.0, 1.0)


@pytest.fixture
def grid100(unit_base):
    return build_grid(unit_base, 0.0, 100)


@pytest.fixture
def basis50(grid100):
    return basis_for_grid(grid100, 50)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="hgpabc")


# Acceptance lines, printed in the terminal summary so they survive output capture.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
