import numpy as np
import pytest

from ggm_knockoff.rng import RngStream


def random_spd(gen, p, jitter=0.5):
    a = gen.standard_normal((p, p))
    return a @ a.T + jitter * np.eye(p)


@pytest.fixture
def gen():
    return np.random.default_rng(20240611)


@pytest.fixture
def stream():
    return RngStream(seed=7)


# One line per acceptance criterion, printed at the end of the run.
CRITERIA = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
