import numpy as np
import pytest

from gwwalk import pgf


@pytest.fixture(scope="session")
def binary():
    return pgf.derive_laws(pgf.BINARY)


@pytest.fixture(scope="session")
def mixed():
    """A law with p_1 > 0, odd degrees and p_0 > 0."""
    return pgf.derive_laws(pgf.OffspringLaw({0: 0.2, 1: 0.3, 3: 0.5}))


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
