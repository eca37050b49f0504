import numpy as np
import pytest

from ldprec.bloom import BloomParams
from ldprec.profiles import builtin_taxonomy


@pytest.fixture(scope="session")
def preference():
    return builtin_taxonomy("preference")


@pytest.fixture(scope="session")
def flight():
    return builtin_taxonomy("flight")


@pytest.fixture
def bloom144():
    return BloomParams(m=144, k=3, n=27)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
