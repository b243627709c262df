from __future__ import annotations

import math

import numpy as np
import pytest

from tworel import _kernels as K
from tworel.intensity import constant_model, equality_model, make_model
from tworel.lyapunov import LyapunovFunction
from tworel.state import ORIGIN, State


@pytest.fixture(scope="session")
def unit_model():
    return constant_model(1.0, 1.0)


@pytest.fixture(scope="session")
def eq3():
    return equality_model(3.0)


@pytest.fixture(scope="session")
def eq6():
    return equality_model(6.0)


@pytest.fixture(scope="session")
def step_model():
    """Discontinuous model: lambda jumps by 1 once y exceeds 0.7, mu jumps once x exceeds 1.2."""
    return make_model(
        {"kind": "cross_step", "params": {"g0": 1.0, "beta": 1.0, "x0": 0.7}},
        {"kind": "cross_step", "params": {"g0": 1.0, "beta": 0.5, "x0": 1.2}},
        1.0, 2.0,
    )


# Kernels are specialised on argument types; seeds always reach them as uint64.
SEED = np.uint64(0)


@pytest.fixture(scope="session")
def warm_kernels(unit_model, eq3):
    """Call every batch kernel once so compilation is not charged to timed tests."""
    M, b = eq3.arrays, eq3.bound
    for method in (K.METHOD_INVERSION, K.METHOD_THINNING):
        K.batch_events_upto(M, b, method, 0, 0.0, 0, 0.0, 1.0, 1, 4, SEED)
        K.batch_hitting(M, b, method, 0, 3.0, 0, 3.0, 5.0, 1.0, 4, SEED, 1e6, 10**8)
        K.batch_dynkin(M, b, method, 0, 0.0, 0, 0.0, 1.0, LyapunovFunction(1.0).encoded(), 4, SEED)
        K.batch_window_hits(M, b, method, np.zeros((1, 4)), 4, SEED, 2.0, 1.0, 1.0)
        K.batch_regeneration(M, b, method, 0, 3.0, 0, 3.0, 5.0, 2.0, 1.0, 2, 4, SEED, 1e6)
        K.simulate_path(M, b, method, 0, 0.0, 0, 0.0, 1.0, K.stream_state(SEED, SEED), 100)
    return True


def binom_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)
