"""Central finite-difference helpers used to validate analytic derivatives."""

import numpy as np


def fd_gradient(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x (ambient coordinates)."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def fd_jacobian(f, x, step=1e-5):
    """Central-difference Jacobian of array-valued f, differentiation index last."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    out = np.zeros(f0.shape + (x.size,))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[..., i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step)
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return np.max(np.abs(a - b)) / denom
