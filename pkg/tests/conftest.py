import numpy as np
import pytest

from sdbli.grid import GridFunction, GridSpec


def dense_neg_laplacian(n):
    """-Delta_h assembled from the 1D second-difference matrix."""
    h = 1.0 / (n + 1)
    T = (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2
    return np.kron(np.eye(n), T) + np.kron(T, np.eye(n))


def rand_gf(spec, rng, scale=1.0):
    return GridFunction(spec, scale * rng.standard_normal(spec.size))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[3, 8])
def spec(request):
    return GridSpec(request.param)
