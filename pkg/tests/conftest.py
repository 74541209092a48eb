import pytest

from impurity_thermometry.core import FrictionLaw
from impurity_thermometry.propagator import BathStage, GaussianMomentumState

ACCEPTANCE_LINES = []


@pytest.fixture
def law4():
    return FrictionLaw(Gamma=1.0, n=4)


@pytest.fixture
def reference_state():
    """P0 = 1, Delta = 0.4 (variance 0.2)."""
    return GaussianMomentumState.from_delta(1.0, 0.4)


@pytest.fixture
def unit_bath(law4):
    return BathStage.at_tau(1.0, law4, M=1.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
