"""Riemannian Adam over products of hyperboloid points and Euclidean arrays.

The first moment is a tangent vector parallel-transported along with its
parameter; the second moment is a per-point scalar tracking the squared
Riemannian gradient norm (coordinatewise moments are chart-dependent on
the hyperboloid). Euclidean blocks use the standard coordinatewise update.
"""

from __future__ import annotations

import numpy as np

from . import lorentz
from .errors import ConfigError, DomainError

_TANGENT_TOL = 1e-6


class RiemannianAdam:
    """Adam state machine for named parameter blocks.

    Blocks are registered with kind ``"lorentz"`` (array of shape (N, D+1),
    each row a hyperboloid point) or ``"euclidean"`` (any shape). ``step``
    takes current values and Riemannian gradients and returns new values.
    """

    def __init__(self, lr: float = 1e-2, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._kind: dict[str, str] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def register(self, name: str, value: np.ndarray, kind: str) -> None:
        if kind not in ("lorentz", "euclidean"):
            raise ConfigError(f"unknown parameter kind {kind!r}")
        value = np.asarray(value, dtype=float)
        self._kind[name] = kind
        self._m[name] = np.zeros_like(value)
        if kind == "lorentz":
            self._v[name] = np.zeros(value.shape[0])
        else:
            self._v[name] = np.zeros_like(value)

    def step(self, values: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Advance one Adam step; returns the updated parameter dict."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        out = {}
        for name, x in values.items():
            g = np.asarray(grads[name], dtype=float)
            kind = self._kind[name]
            m, v = self._m[name], self._v[name]
            if kind == "euclidean":
                m = self.beta1 * m + (1 - self.beta1) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                new = x - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            else:
                resid = np.abs(lorentz.minkowski_inner(g, x))
                scale = np.maximum(1.0, lorentz.tangent_norm(g))
                if np.any(resid > _TANGENT_TOL * scale):
                    raise DomainError(
                        f"gradient for {name!r} not tangent: max residual "
                        f"{np.max(resid):.3g}"
                    )
                m = self.beta1 * m + (1 - self.beta1) * g
                gnorm2 = np.maximum(lorentz.minkowski_inner(g, g), 0.0)
                v = self.beta2 * v + (1 - self.beta2) * gnorm2
                mhat = m / bc1
                denom = np.sqrt(v / bc2) + self.eps
                step_vec = -self.lr * mhat / denom[:, None]
                new = lorentz.renormalize(
                    lorentz.expmap(x, step_vec, validate=False))
                m = lorentz.parallel_transport(x, new, m, validate=False)
                # kill transport round-off drift out of the tangent space
                m = lorentz.project_to_tangent(
                    new, lorentz.gl_apply(m), validate=False)
            self._m[name], self._v[name] = m, v
            out[name] = new
        return out
