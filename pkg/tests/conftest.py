import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pnp_jko.grid import Grid, ScalarField, State, normalize

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def gaussian(grid, c, var):
    x = grid.coords[0]
    return normalize(np.exp(-(x - c) ** 2 / var), grid)


@pytest.fixture
def grid128():
    return Grid.uniform(0.0, 1.0, 128)


@pytest.fixture
def coupled128(grid128):
    """Distinct bumps in distinct quadratic wells on [0, 1]."""
    g = grid128
    x = g.coords[0]
    U = ScalarField(2 * (x - 0.5) ** 2, g)
    V = ScalarField(1.5 * (x - 0.4) ** 2, g)
    z0 = State(gaussian(g, 0.3, 0.01), gaussian(g, 0.7, 0.02))
    return g, U, V, z0


_CRITERIA = {}


def record_criterion(number, ok, detail=""):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
