import numpy as np
import pytest

from stirlab.potentials import PotentialSet


@pytest.fixture
def smooth_H():
    # time-dependent trigonometric potentials for both species
    return PotentialSet.fourier([[(1, 0.0, 0.5, 0.3, 0.0)], [(1, 0.4, 0.0, 0.0, -0.2), (2, 0.1, 0.1)]],
                                Mu=256, times=(0.0, 0.05, 0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
