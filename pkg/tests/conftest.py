import numpy as np
import pytest

from pcuq import CallableMap, Dataset, GaussianObsModel, LocationMap, SteinKernel


def central_diff(f, x, h=1e-6):
    """Componentwise central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def linear_map(n, d, p, seed=0, constant=False):
    """CallableMap w(x_i) rows = M_i theta + c_i with exact Jacobian."""
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, d, p))
    if constant:
        M[:] = M[0]
    c = rng.standard_normal((n, d))
    if constant:
        c[:] = c[0]
    return CallableMap(
        fn=lambda t: np.einsum("idk,k->id", M, t) + c,
        jac=lambda t: M.copy(),
        param_dim=p,
        obs_dim=d,
        constant_over_x=constant,
    )


def toy_dataset(n=6, d=1, seed=0, tied_x=False):
    rng = np.random.default_rng(seed)
    x = np.zeros(n) if tied_x else np.arange(n, dtype=float)
    return Dataset(x, rng.standard_normal((n, d)))


@pytest.fixture
def location_kernel():
    """Location-model kernel on a small exchangeable dataset."""
    ds = toy_dataset(n=8, tied_x=True, seed=3)
    model = GaussianObsModel(LocationMap(ds.n, 1), np.array([1.0]))
    return SteinKernel(ds, model)


@pytest.fixture
def linear_kernel():
    """Dense two-parameter kernel with distinct covariates."""
    ds = toy_dataset(n=5, d=2, seed=4)
    fwd = linear_map(ds.n, 2, 2, seed=5)
    model = GaussianObsModel(fwd, np.array([0.8, 1.2]))
    return SteinKernel(ds, model)
