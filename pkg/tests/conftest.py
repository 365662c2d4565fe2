# tests/conftest.py
import math

import numpy as np
import pytest

from app.flows.gammacalc import GeneratorFamily, two_point
from app.flows.model_metrics import get_model
from app.flows.riemann import RiemannianFamily
from app.flows.spaces import cycle_space, interval_space
from app.flows.tgs import TimeGrid
from app.flows.transport import TdMmSpace


@pytest.fixture
def grid():
    return TimeGrid.uniform(0.0, 0.2, 2)


@pytest.fixture
def circle(grid):
    """Static 16-cycle of circumference 2 pi."""
    return cycle_space(16, grid)


@pytest.fixture
def shrinking_circle():
    g = TimeGrid.uniform(0.0, 0.2, 4)
    return cycle_space(16, g, scale=lambda t: math.sqrt(1.0 - 2.0 * t))


@pytest.fixture
def interval(grid):
    return interval_space(9, grid, -1.0, 1.0)


@pytest.fixture
def circle_tdmm(circle):
    return TdMmSpace.unweighted(circle)


@pytest.fixture
def two_point_static():
    return GeneratorFamily.static(two_point(1.0), TimeGrid.uniform(0.0, 0.5, 5))


@pytest.fixture
def shrinking_sphere():
    return RiemannianFamily.conformal(get_model("sphere"), TimeGrid.uniform(0.0, 0.25, 5), "1 - 2*t")


@pytest.fixture
def expanding_hyperbolic():
    return RiemannianFamily.conformal(get_model("hyperbolic"), TimeGrid.uniform(0.0, 0.25, 5), "1 + 2*t")


@pytest.fixture
def rng():
    return np.random.default_rng(7)
