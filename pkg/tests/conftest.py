import numpy as np
import pytest

from fedmeta import _kernels


@pytest.fixture(params=sorted(_kernels.available()))
def backend(request):
    """Each importable kernel backend."""
    return _kernels.get(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
