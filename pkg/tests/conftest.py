import numpy as np
import pytest

from qdlab.groups import GroupSpec
from qdlab.lattice import Rectangle, TorusGeometry
from qdlab.operators import OperatorFactory
from qdlab.suites import torus_generator


@pytest.fixture(scope="session")
def z2():
    return GroupSpec.cyclic(2)


@pytest.fixture(scope="session")
def z3():
    return GroupSpec.cyclic(3)


@pytest.fixture(scope="session")
def factory2(z2):
    """Z2 on the 2x2 torus (8 edges, ambient dimension 256)."""
    return OperatorFactory(TorusGeometry(2), z2)


@pytest.fixture(scope="session")
def unit_square2(factory2):
    return Rectangle(factory2.torus, (0, 0), (1, 1)).region


@pytest.fixture(scope="session")
def torus_beta1():
    """(Lindbladian, Gibbs state) on the full N=2, Z2 torus at beta=1."""
    return torus_generator(2, (2,), 2**20, 1.0, "shift_modulation", "sqrt_boltzmann")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for name, status, detail in VERDICTS:
            terminalreporter.write_line(f"{status}  criterion {name}: {detail}")
