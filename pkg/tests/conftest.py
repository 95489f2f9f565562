import numpy as np
import pytest

from quadradon import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def available_backends():
    out = ["python"]
    try:
        kernels.backend_module("cython")
        out.append("cython")
    except ImportError:
        pass
    return out


# One line per acceptance criterion, filled in by test_acceptance.py and
# printed in the terminal summary so that the verdicts show up even when
# output capture is on.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
