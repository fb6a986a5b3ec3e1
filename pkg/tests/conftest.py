import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from legendre_decomp import Basis, RawTensor, normalize  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20181)


@pytest.fixture
def p22():
    """The 2 x 2 table used by the closed-form independence example."""
    return normalize(RawTensor([[0.4, 0.1], [0.3, 0.2]]))


@pytest.fixture
def indep_basis(p22):
    return Basis(p22.space, [(1, 2), (2, 1)])
