import numpy as np
import pytest

from chaoslab.grid_kernel import Grid, Kernel, symmetrize


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_kernel(rng, p, m, grid=None, symmetric=True):
    grid = Grid.uniform(m) if grid is None else grid
    f = Kernel(grid, rng.standard_normal((grid.m,) * p))
    return symmetrize(f) if symmetric else f


def random_grid(rng, m):
    mu = rng.uniform(0.2, 1.0, m)
    return Grid(mu / mu.sum())


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
