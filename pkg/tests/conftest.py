import numpy as np
import pytest

from quiverflow import CentralShift, IntegratorConfig
from quiverflow.presets import a2, jordan_one_loop, jordan_two_loops


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def rng():
    return philox(12345)


@pytest.fixture
def a2_model():
    q, dims = a2()
    return q, dims, CentralShift((-1.0, 1.0))


@pytest.fixture
def jordan1_model():
    q, dims = jordan_one_loop(1)
    return q, dims, CentralShift((0.7,))


@pytest.fixture
def jordan2_model():
    q, dims = jordan_two_loops(2)
    return q, dims, CentralShift((0.5,))


@pytest.fixture
def tight_cfg():
    return IntegratorConfig(rel_tol=1e-10, abs_tol=1e-13, max_time=200.0)


def a2_logistic(s0, t):
    """Closed-form |x(t)|^2 for the one-edge quiver with shift (-1, 1).

    Independent oracle: d s / d t = -2 s (s - 2) with s(0) = s0.
    """
    e = np.exp(4.0 * t)
    return 2.0 * s0 * e / (2.0 + s0 * (e - 1.0))


def a2_f(s):
    """f as a function of s = |x|^2 for the shift (-1, 1)."""
    return (s - 2.0) ** 2 / 2.0
