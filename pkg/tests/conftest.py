import math

import numpy as np
import pytest

from minkgauss.barriers import BarrierConfig, build_barriers
from minkgauss.semitrough import solve_profile
from minkgauss.sphere import CapUnion, SphereCap, basis_vector


@pytest.fixture(scope="session")
def profile2():
    return solve_profile(2)


@pytest.fixture(scope="session")
def halfplane():
    return CapUnion([SphereCap(basis_vector(2, 0), math.pi / 2)])


@pytest.fixture(scope="session")
def halfplane_pair(halfplane, profile2):
    return build_barriers(halfplane, BarrierConfig(k1=2.0, k2=0.5, ball_count=16), profile2)


def hyperboloid(k=1.0, n=2):
    return lambda x: np.sqrt(k ** (-2.0 / n) + np.sum(np.asarray(x) ** 2, axis=-1))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
