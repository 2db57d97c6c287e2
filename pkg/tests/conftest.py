import numpy as np
import pytest

from gridvolt.netmodel import Branch, Bus, Network, PvUnit, bundled_network


def two_bus(x=0.1, r=0.0, load_q=0.0, load_p=0.0, devices=True):
    return Network(
        buses=(Bus(1, "slack"), Bus(2)),
        branches=(Branch(1, 2, r, x),),
        pvs=(PvUnit(2, 0.5, 0.6),) if devices else (),
        svcs=(),
        s_base=1.0,
        load_p=(0.0, load_p),
        load_q=(0.0, load_q),
        name="two_bus",
    )


@pytest.fixture(scope="session")
def ieee33():
    return bundled_network("ieee33")


@pytest.fixture(scope="session")
def ieee123():
    return bundled_network("ieee123")


@pytest.fixture(scope="session")
def toy6():
    return bundled_network("toy6")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
