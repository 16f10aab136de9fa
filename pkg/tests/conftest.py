import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iwdrift.params import TireParams, VehicleParams  # noqa: E402


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def tires():
    return TireParams()


def random_states(rng, n, vmax=4.0):
    V = rng.uniform(0.2, vmax, n)
    beta = rng.uniform(-1.2, 1.2, n)
    psi = rng.uniform(-np.pi, np.pi, n)
    return np.column_stack([rng.uniform(-5, 5, n), rng.uniform(-5, 5, n), psi,
                            V * np.cos(psi + beta), V * np.sin(psi + beta), rng.uniform(-3, 3, n)])


def random_controls(rng, n, R=0.0565):
    return np.column_stack([rng.uniform(-0.46, 0.46, n), rng.uniform(1.0, 7.0, (n, 4)) / R])


def random_tires(rng, n):
    return np.column_stack([rng.uniform(0.8, 1.0, n), rng.uniform(2.0, 2.5, n), rng.uniform(0.3, 0.4, n)])


def random_disturbance(rng, n, scale=0.3):
    return np.clip(rng.normal(0, scale, (n, 8)), -0.5, 0.5)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
