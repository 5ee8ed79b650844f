import numpy as np
import pytest

from hypepull import lorentz


def random_points(rng, n, dim=2, scale=1.0):
    """Random hyperboloid points via tangent draws at the origin."""
    v = np.concatenate([np.zeros((n, 1)), scale * rng.standard_normal((n, dim))],
                       axis=1)
    return lorentz.expmap(lorentz.origin(dim), v, validate=False)


def random_tangent(rng, x, scale=1.0):
    """Random tangent vector at x from a projected ambient Gaussian."""
    w = scale * rng.standard_normal(x.shape[-1])
    return lorentz.project_to_tangent(x, w, validate=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
