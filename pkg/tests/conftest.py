import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zenotocsy.presets import pyridine as _pyridine  # noqa: E402
from zenotocsy.spin_core import SpinSystem  # noqa: E402


@pytest.fixture
def pyridine():
    return _pyridine()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def system_from_matrix(J, groups=None):
    labels = [f"S{i}" for i in range(J.shape[0])]
    return SpinSystem(labels, J, groups)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
