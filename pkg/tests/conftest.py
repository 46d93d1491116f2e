import numpy as np
import pytest

from malarianet import tensor as T


@pytest.fixture(autouse=True)
def _finite_guard():
    """Every op output is scanned for NaN/Inf while tests run."""
    T.set_debug_checks(True)
    yield
    T.set_debug_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
