import numpy as np
import pytest

from mfcopula import ParameterVector, SiteSet


def sim41(fixed=()):
    """Bivariate setting used throughout the simulation study."""
    return ParameterVector.bivariate([4, 4], [0.4, 0.6], 0.8, 0.6, [0.6, 0.3], -0.7, fixed=fixed)


def case1():
    return ParameterVector.bivariate([4, 5], [0.6, 0.2], 0.4, 0.7, [0.7, 0.3], 0.7)


def case2():
    return ParameterVector.bivariate([4, 5], [0.4, 0.3], 0.4, 0.8, [0.7, 0.3], -1.0)


@pytest.fixture
def theta41():
    return sim41()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def sites5(rng):
    return SiteSet.from_coords(rng.uniform(size=(5, 2)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
