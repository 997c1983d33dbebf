import numpy as np
import pytest

from ntm.kinetics import EdgeGeometry, EdgeParams


@pytest.fixture
def params():
    return EdgeParams()


@pytest.fixture
def geom():
    return EdgeGeometry.from_counts()


@pytest.fixture
def small_geom():
    """Coarse five-compartment edge for fast tests."""
    return EdgeGeometry.from_counts((2.0, 4.0, 24.0, 26.0, 28.0), (4, 4, 20, 4, 4))


@pytest.fixture
def unit_diffusion():
    """Geometry and parameters with a == 1 everywhere, L = 1 and no advection."""
    g = EdgeGeometry.from_counts((0.2, 0.4, 0.6, 0.8, 1.0), (10, 10, 10, 10, 10))
    p = EdgeParams(D=1.0, f=1.0, lambda1=1.0, lambda2=1.0, delta=0.0, epsilon=0.0)
    return g, p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
            terminalreporter.write_line(line)
