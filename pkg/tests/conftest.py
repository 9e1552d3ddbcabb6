import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robfqr.funcspace import Grid  # noqa: E402
from oracles import model2_phi  # noqa: E402

# acceptance verdicts, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def grid():
    return Grid.uniform(100)


def model2_curves(rng, n, grid, sd=(2.0, 1.0)):
    phi1, phi2 = model2_phi(grid.points)
    xi = rng.standard_normal((n, 2)) * np.asarray(sd)
    return xi[:, :1] * phi1 + xi[:, 1:] * phi2, xi


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
