import numpy as np
import pytest

from tomograph.netmodel import TOY_ROUTING, TOY_TRAFFIC

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def toy_A():
    return TOY_ROUTING.copy()


@pytest.fixture
def toy_x():
    return TOY_TRAFFIC.copy()


@pytest.fixture
def toy_phi():
    return np.array([[1.0, 0, 0], [0, 0.5, 0.7], [0.4, 0.5, 0], [0, 0, 1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=str):
        status, detail = ACCEPTANCE[key]
        tr.write_line(f"criterion {key}: {status}  {detail}")
