import numpy as np
import pytest

from oivae import diffcore as dc
from oivae.model import ArchitectureSpec, GroupSpec, init_params

ARCHS = {
    "linear": ArchitectureSpec(4, 1, (), ("affine",)),
    "tanh": ArchitectureSpec(4, 3, (), ("tanh", "affine")),
    "hidden-relu": ArchitectureSpec(4, 3, ("affine:7", "relu"), ("tanh", "affine")),
}


def finite_difference_errors(loss_fn, arrays, n_coords, rng, h=1e-5):
    """Relative errors |analytic - numeric| / max(1, |analytic|) at random coordinates.

    ``loss_fn`` maps a list of Node leaves to a scalar Node; ``arrays`` are
    the values at which gradients are compared.
    """
    leaves = [dc.parameter(a) for a in arrays]
    dc.backward(loss_fn(leaves))
    analytic = [leaf.grad.copy() for leaf in leaves]
    errors = []
    for _ in range(n_coords):
        i = rng.integers(len(arrays))
        idx = tuple(rng.integers(s) for s in arrays[i].shape)
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[i][idx] += h
        minus[i][idx] -= h
        fp = float(loss_fn([dc.constant(a) for a in plus]).value)
        fm = float(loss_fn([dc.constant(a) for a in minus]).value)
        numeric = (fp - fm) / (2 * h)
        a = analytic[i][idx]
        errors.append(abs(a - numeric) / max(1.0, abs(a)))
    return np.array(errors)


def whitened_eps(rng, n_samples, batch, k):
    """Draws whose sample mean is exactly 0 and sample covariance exactly I per row.

    Any quadratic function of ``eps`` then averages to its expectation.
    """
    out = np.empty((n_samples, batch, k))
    for b in range(batch):
        e = rng.standard_normal((n_samples, k))
        e -= e.mean(axis=0)
        cov = e.T @ e / n_samples
        e = e @ np.linalg.inv(np.linalg.cholesky(cov)).T
        out[:, b, :] = e
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_groups():
    return GroupSpec(("a", "b", "c"), (2, 3, 1))


def make_params(groups, arch, seed=0):
    return init_params(groups, arch, np.random.default_rng(seed))
