import numpy as np
import pytest

from evdepth.kernels import available_backends, load_backend


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=available_backends())
def backend(request):
    return load_backend(request.param)
