import sys

import numpy as np
import pytest

from mnsl.geometry import Sphere, Torus


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def S2():
    return Sphere(2)


@pytest.fixture
def T2():
    return Torus(2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
