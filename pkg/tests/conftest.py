import numpy as np
import pytest

from pkernel.core import CumulativeKernel, Grid
from pkernel.synth import KernelSpec, make_kernel


@pytest.fixture
def unit_grid():
    return Grid(1.0, 400)


@pytest.fixture
def identity_kernel(unit_grid):
    """P(x) = x on [0, 1]."""
    return CumulativeKernel(unit_grid, 0.0, np.full(unit_grid.M, unit_grid.dx))


@pytest.fixture
def bimodal(unit_grid):
    return make_kernel(KernelSpec(), unit_grid)


@pytest.fixture
def uniform_prior(unit_grid):
    return make_kernel(KernelSpec("uniform", total_mass=1.0), unit_grid)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Log one acceptance line; the terminal summary repeats them all."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def _record(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
