"""Shared fixtures.  Expensive spectra are computed once per session."""
import numpy as np
import pytest

from blochdecay import PlaneWaveBasis, example_density, make_grid
from blochdecay.dynamics import compute_spectra

PI3 = np.array([np.pi, np.pi, np.pi])


@pytest.fixture(scope="session")
def dens():
    return example_density()


@pytest.fixture(scope="session")
def basis1():
    return PlaneWaveBasis(1)


@pytest.fixture(scope="session")
def basis2():
    return PlaneWaveBasis(2)


@pytest.fixture(scope="session")
def grid4():
    return make_grid(4)


@pytest.fixture(scope="session")
def spectra_l4_n1(dens, grid4, basis1):
    """All 64 points of the L=4 grid at N=1, with the eigenpairs of B kept."""
    return compute_spectra(dens, grid4, basis1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])


@pytest.fixture
def record(request):
    """``record(k, ok, detail)`` stores one pass/fail line for criterion ``k``."""

    def _record(k, ok, detail):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance_lines.append((k, line))
        print(line)
        return ok

    return _record
