import numpy as np
import pytest

from escsr import _accel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def flavour(request):
    """Run a test once per hot-kernel flavour."""
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    with _accel.use_numba(request.param == "numba"):
        yield request.param
