import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dense_grad(rows, cols):
    """Explicit (2mn x mn) forward-difference matrix, built entry by entry.

    Pixel (i, j) sits at index i + j*rows (column-major). Horizontal
    differences come first, vertical ones second; the last difference along
    each axis is zero.
    """
    mn = rows * cols
    P = np.zeros((2 * mn, mn))
    idx = lambda i, j: i + j * rows
    for i in range(rows):
        for j in range(cols):
            p = idx(i, j)
            if j + 1 < cols:
                P[p, idx(i, j + 1)] += 1.0
                P[p, p] -= 1.0
            if i + 1 < rows:
                P[mn + p, idx(i + 1, j)] += 1.0
                P[mn + p, p] -= 1.0
    return P


# ---- acceptance reporting: one line per criterion, echoed in the terminal summary

_ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    def emit(line):
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
