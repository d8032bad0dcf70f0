import numpy as np
import pytest

from metricflow import Grid


@pytest.fixture
def torus16():
    return Grid(2, "torus", 16)


@pytest.fixture
def torus64():
    return Grid(2, "torus", 64)


@pytest.fixture
def box64():
    return Grid(2, "box", 64, extent=2.0)


def max_abs(a):
    return float(np.max(np.abs(a)))
