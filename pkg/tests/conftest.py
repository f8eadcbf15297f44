import numpy as np
import pytest

from mvcalc.functional import ControlledDynamics, SmoothScalarField
from mvcalc.measure import FiniteMeasure, TestFamily


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def family():
    return TestFamily(K=64)


@pytest.fixture(scope="session")
def phi():
    return SmoothScalarField.gaussian(0.0, 1.0, name="phi")


@pytest.fixture(scope="session")
def phi2():
    return SmoothScalarField.gaussian(0.5, 0.7, name="phi2")


@pytest.fixture(scope="session")
def super_bm():
    return ControlledDynamics.constant(0.0, 1.0, 1.0)


def random_measure(rng, n_max=5, spread=2.0, max_mass=2.0):
    n = int(rng.integers(1, n_max + 1))
    return FiniteMeasure(rng.normal(0.0, spread, n), rng.uniform(0.0, max_mass / n, n))


@pytest.fixture
def make_measure(rng):
    def make(**kw):
        return random_measure(rng, **kw)

    return make


# acceptance lines are collected here and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
