import numpy as np
import pytest

import mimnet.tensor as T


@pytest.fixture(autouse=True)
def _debug_checks():
    """Keep NaN/Inf detection active for every test."""
    T.set_debug_checks(True)
    yield
    T.set_debug_checks(True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
