"""Lorentz-model hyperbolic manifold primitives.

Points live on the hyperboloid ``{x in R^{D+1} : <x,x>_L = -1, x_0 > 0}``
where ``<.,.>_L`` is the Minkowski inner product with metric
``diag(-1, 1, ..., 1)``. All functions accept arrays whose last axis holds
the ambient coordinates and broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError

ON_MANIFOLD_TOL = 1e-6
_SMALL = 1e-8


def origin(dim: int) -> np.ndarray:
    """Basepoint mu_0 = (1, 0, ..., 0) of the D-dimensional hyperboloid."""
    mu = np.zeros(dim + 1)
    mu[0] = 1.0
    return mu


def gl_apply(v: np.ndarray) -> np.ndarray:
    """Multiply by the Minkowski metric: negate the time component."""
    out = np.array(v, dtype=float, copy=True)
    out[..., 0] = -out[..., 0]
    return out


def minkowski_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minkowski inner product -a0*b0 + sum_i ai*bi, batched on the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(
            f"ambient length mismatch: {a.shape[-1]} vs {b.shape[-1]}"
        )
    if a.shape[-1] < 2:
        raise DimensionError("ambient vectors need length >= 2")
    prod = a * b
    return np.sum(prod[..., 1:], axis=-1) - prod[..., 0]


def manifold_defect(x: np.ndarray) -> np.ndarray:
    """Constraint residual <x,x>_L + 1; zero on the hyperboloid."""
    return minkowski_inner(x, x) + 1.0


def check_point(x: np.ndarray, tol: float = ON_MANIFOLD_TOL) -> None:
    x = np.asarray(x, dtype=float)
    defect = np.abs(manifold_defect(x))
    # relative scale: the constraint residual of far points carries the
    # round-off of coordinates of size cosh(distance)
    scale = 1.0 + np.sum(x * x, axis=-1)
    if np.any(defect > tol * scale):
        raise DomainError(f"point off the hyperboloid: |<x,x>_L + 1| = {np.max(defect):.3g}")
    if np.any(x[..., 0] <= 0):
        raise DomainError("point on the wrong sheet: x_0 <= 0")


def check_tangent(x: np.ndarray, u: np.ndarray, tol: float = ON_MANIFOLD_TOL) -> None:
    resid = np.abs(minkowski_inner(u, x))
    scale = np.maximum(1.0, np.sqrt(np.maximum(minkowski_inner(u, u), 0.0)))
    if np.any(resid > tol * scale):
        raise DomainError(f"vector not tangent: |<u,x>_L| = {np.max(resid):.3g}")


def renormalize(x: np.ndarray) -> np.ndarray:
    """Snap back to the hyperboloid by recomputing x_0 from the space part."""
    x = np.array(x, dtype=float, copy=True)
    x[..., 0] = np.sqrt(1.0 + np.sum(x[..., 1:] ** 2, axis=-1))
    return x


def sinhc(r):
    """sinh(r)/r with a series branch at r = 0."""
    r = np.asarray(r, dtype=float)
    small = np.abs(r) < _SMALL
    safe = np.where(small, 1.0, r)
    out = np.where(small, 1.0 + r * r / 6.0, np.sinh(safe) / safe)
    return out if out.ndim else float(out)


def _log_r_over_sinh(r):
    """log(r / sinh r), stable for r -> 0 and large r (no sinh overflow)."""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    small = r < 1e-4
    big = r > 20.0
    mid = ~(small | big)
    out[small] = -(r[small] ** 2) / 6.0
    rm = r[mid]
    out[mid] = np.log(rm / np.sinh(rm))
    rb = r[big]
    # log sinh r = r - log 2 + log1p(-exp(-2r))
    out[big] = np.log(rb) - rb + np.log(2.0) - np.log1p(-np.exp(-2.0 * rb))
    return out if out.ndim else float(out)


def tangent_norm(u: np.ndarray) -> np.ndarray:
    """Riemannian norm of a tangent vector (Minkowski norm, clamped >= 0)."""
    return np.sqrt(np.maximum(minkowski_inner(u, u), 0.0))


def distance(x: np.ndarray, y: np.ndarray, validate: bool = True) -> np.ndarray:
    """Geodesic distance arccosh(-<x,y>_L), clamping the argument to >= 1."""
    if validate:
        check_point(x)
        check_point(y)
    beta = np.maximum(-minkowski_inner(x, y), 1.0)
    d = np.arccosh(beta)
    return d if np.ndim(d) else float(d)


def expmap(x: np.ndarray, u: np.ndarray, validate: bool = True) -> np.ndarray:
    """Exponential map cosh(|u|) x + sinh(|u|) u / |u| (series-safe at u = 0)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if validate:
        check_point(x)
        check_tangent(x, u)
    r = tangent_norm(u)
    r_ = r[..., None] if np.ndim(r) else r
    return np.cosh(r_) * x + sinhc(r_) * u


def logmap(x: np.ndarray, y: np.ndarray, validate: bool = True) -> np.ndarray:
    """Inverse of the exponential map; returns the zero vector at y = x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if validate:
        check_point(x)
        check_point(y)
    beta = np.maximum(-minkowski_inner(x, y), 1.0)
    rho = np.arccosh(beta)
    # Log_x(y) = rho * (y - beta x) / sinh(rho); the prefactor tends to 1.
    fac = 1.0 / sinhc(rho)
    fac_ = fac[..., None] if np.ndim(fac) else fac
    beta_ = beta[..., None] if np.ndim(beta) else beta
    return fac_ * (y - beta_ * x)


def parallel_transport(
    x: np.ndarray, y: np.ndarray, u: np.ndarray, validate: bool = True
) -> np.ndarray:
    """Transport a tangent vector from T_x to T_y along the connecting geodesic."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if validate:
        check_point(x)
        check_point(y)
        check_tangent(x, u)
    if x.shape == y.shape and np.array_equal(x, y):
        return u.copy()
    coef = minkowski_inner(y, u) / (1.0 - minkowski_inner(x, y))
    coef_ = coef[..., None] if np.ndim(coef) else coef
    return u + coef_ * (x + y)


def project_to_tangent(x: np.ndarray, w: np.ndarray, validate: bool = True) -> np.ndarray:
    """Riemannian-gradient projection P_x w = (G^L + x x^T) w of an ambient vector."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if validate:
        check_point(x)
    dot = np.sum(x * w, axis=-1)
    dot_ = dot[..., None] if np.ndim(dot) else dot
    return gl_apply(w) + dot_ * x


def projector_matrix(x: np.ndarray) -> np.ndarray:
    """P_x = G^L + x x^T as a dense (D+1, D+1) matrix."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    gl = np.eye(n)
    gl[0, 0] = -1.0
    return gl + np.outer(x, x)


def lorentz_to_poincare(x: np.ndarray, validate: bool = True) -> np.ndarray:
    """Isometric chart map (x_1, ..., x_D) / (x_0 + 1) onto the open unit ball."""
    x = np.asarray(x, dtype=float)
    if validate:
        check_point(x)
    return x[..., 1:] / (x[..., 0:1] + 1.0)


def poincare_to_lorentz(p: np.ndarray) -> np.ndarray:
    """Inverse chart map (1 + |p|^2, 2p) / (1 - |p|^2); requires |p| < 1."""
    p = np.asarray(p, dtype=float)
    n2 = np.sum(p * p, axis=-1)
    if np.any(n2 >= 1.0):
        raise DomainError("Poincare point with norm >= 1")
    n2_ = n2[..., None] if np.ndim(n2) else n2
    top = np.concatenate([1.0 + n2_, 2.0 * p], axis=-1) if np.ndim(n2) else np.concatenate(
        [[1.0 + n2], 2.0 * p]
    )
    return top / (1.0 - n2_)


def poincare_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hyperbolic distance expressed in Poincare-ball coordinates."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    num = 2.0 * np.sum((p - q) ** 2, axis=-1)
    den = (1.0 - np.sum(p * p, axis=-1)) * (1.0 - np.sum(q * q, axis=-1))
    arg = np.maximum(1.0 + num / den, 1.0)
    d = np.arccosh(arg)
    return d if np.ndim(d) else float(d)


def chart_jacobians(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of the Lorentz-to-Poincare chart map.

    Returns ``(first, second)`` with shapes (D, D+1) and (D, D+1, D+1):
    ``first[i, j] = d p_i / d x_j`` and ``second[i, j, k] = d^2 p_i / dx_j dx_k``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    d = n - 1
    w = 1.0 + x[0]
    first = np.zeros((d, n))
    second = np.zeros((d, n, n))
    for i in range(d):
        first[i, 0] = -x[i + 1] / w**2
        first[i, i + 1] = 1.0 / w
        second[i, 0, 0] = 2.0 * x[i + 1] / w**3
        second[i, 0, i + 1] = -1.0 / w**2
        second[i, i + 1, 0] = -1.0 / w**2
    return first, second


@dataclass
class WrappedGaussian:
    """Wrapped Gaussian on the hyperboloid: a tangent Gaussian at mu_0,
    transported to ``mean`` and pushed through the exponential map.
    """

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        check_point(self.mean)
        d = self.mean.shape[-1] - 1
        if self.cov.shape != (d, d):
            raise DimensionError(f"cov must be ({d}, {d}), got {self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise DomainError("cov must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("cov must be positive definite") from exc

    @classmethod
    def isotropic(cls, mean: np.ndarray, alpha: float) -> "WrappedGaussian":
        if alpha <= 0:
            raise DomainError("spread alpha must be positive")
        d = np.asarray(mean).shape[-1] - 1
        return cls(mean, alpha * np.eye(d))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1] - 1

    def logpdf(self, x: np.ndarray) -> float:
        """Log-density: tangent Gaussian term plus the (D-1) log(r/sinh r) correction."""
        d = self.dim
        mu0 = origin(d)
        u = logmap(self.mean, x)
        v = parallel_transport(self.mean, mu0, u, validate=False)
        vt = v[..., 1:]
        r = tangent_norm(u)
        half_logdet = float(np.sum(np.log(np.diag(self._chol))))
        z = np.linalg.solve(self._chol, np.atleast_2d(vt).T)
        quad = np.sum(z * z, axis=0)
        if np.ndim(x) == 1:
            quad = float(quad[0])
        gauss = -0.5 * d * np.log(2.0 * np.pi) - half_logdet - 0.5 * quad
        return gauss + (d - 1) * _log_r_over_sinh(r)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Draw points via the tangent-sample / transport / exp construction."""
        d = self.dim
        size = (1 if n is None else n, d)
        vt = rng.standard_normal(size) @ self._chol.T
        v = np.concatenate([np.zeros((size[0], 1)), vt], axis=-1)
        mu0 = origin(d)
        u = parallel_transport(mu0, self.mean, v, validate=False)
        x = expmap(self.mean, u, validate=False)
        return x[0] if n is None else x


def frechet_mean(points: np.ndarray, iters: int = 50) -> np.ndarray:
    """Karcher mean via fixed-point iteration of the tangent-mean map."""
    points = np.asarray(points, dtype=float)
    m = renormalize(np.mean(points, axis=0))
    for _ in range(iters):
        t = np.mean(logmap(m, points, validate=False), axis=0)
        m = renormalize(expmap(m, project_to_tangent(m, gl_apply(t), validate=False),
                               validate=False))
    return m
