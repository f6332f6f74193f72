import numpy as np
import pytest

from lorenzflow.transforms import Density, Grid1D


def gaussian(n=256, lo=-6.0, hi=6.0, mu=0.0, sigma=1.0):
    return Density.from_function(Grid1D(lo, hi, n), lambda x: np.exp(-0.5 * ((x - mu) / sigma) ** 2))


def uniform(lo, hi, n=256):
    return Density(Grid1D(lo, hi, n), np.ones(n))


def bump(n=256, a=0.5, b=0.2, lo=-3.0, hi=3.0):
    L = hi - lo
    return Density.from_function(
        Grid1D(lo, hi, n), lambda x: 1 + a * np.cos(2 * np.pi * (x - lo) / L) + b * np.sin(2 * np.pi * (x - lo) / L))


@pytest.fixture
def rho_gauss():
    return gaussian()


@pytest.fixture
def rho_bump():
    return bump()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
