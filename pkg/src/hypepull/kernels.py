"""Squared-exponential kernels on 2D/3D hyperbolic space and Euclidean space,
with analytic first, second (cross and same-argument), and third derivatives.

Derivative layout conventions used throughout:

* ``grad_x(x, z)`` is the ambient gradient of ``k`` with respect to its
  first argument.
* ``cross_hessian(x, z)[i, j] = d^2 k / dx_i dz_j``.
* ``third_tensors(x, z)`` returns ``(T_x, T_z)`` with
  ``T_x[i, j, k] = d(cross_hessian[i, j]) / dx_k`` and
  ``T_z[i, j, k] = d(cross_hessian[i, j]) / dz_k``.

The 3D kernel's derivative helpers are singular at coincident inputs; they
are evaluated through exact limits at coincidence, an even Taylor series in
the geodesic distance over the cancellation-dominated region, and the
closed forms elsewhere.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erfinv

from . import lorentz
from .errors import ConfigError, DimensionError, DomainError

# Below this distance the closed-form helper expressions lose all relative
# accuracy in float64 (terms of size rho^-6 cancelling to O(1)); the even
# Taylor series is exact to ~1e-11 up to the cutoff.
SERIES_CUTOFF = 0.15


def _gl_vec(n: int) -> np.ndarray:
    g = np.ones(n)
    g[0] = -1.0
    return g


# ---------------------------------------------------------------------------
# 3D hyperbolic SE kernel helper functions and their singular limits
# ---------------------------------------------------------------------------

def ghq_limits(nu: float) -> tuple[float, float, float]:
    """Exact values of the helper functions g, h, q at coincident inputs."""
    g = 2.0 / nu + 1.0 / 3.0
    h = 4.0 / nu**2 + 6.0 / (3.0 * nu) + 4.0 / 15.0
    q = 8.0 / nu**3 + 8.0 / nu**2 + 14.0 / (5.0 * nu) + 12.0 / 35.0
    return g, h, q


def _ghq_series(rho2: np.ndarray, nu: float):
    """Even Taylor series of (g, h, q) in rho, valid for rho < ~0.15."""
    n = nu
    gc = (
        (n + 6) / (3 * n),
        -2 * (n + 5) / (15 * n),
        2 * (5 * n + 21) / (315 * n),
        -4 * (7 * n + 25) / (4725 * n),
        2 * (25 * n + 77) / (51975 * n),
    )
    hc = (
        4 / 15 + 2 / n + 4 / n**2,
        -6 / 35 - 17 / (15 * n) - 2 / n**2,
        (78 * n**2 + 457 * n + 714) / (1260 * n**2),
        -(6918 * n**2 + 36157 * n + 50270) / (415800 * n**2),
        (1125714 * n**2 + 5285735 * n + 6580574) / (302702400 * n**2),
    )
    qc = (
        12 / 35 + 14 / (5 * n) + 8 / n**2 + 8 / n**3,
        -8 * (12 * n**3 + 89 * n**2 + 231 * n + 210) / (315 * n**3),
        8 * (192 * n**3 + 1298 * n**2 + 3069 * n + 2541) / (10395 * n**3),
        -16 * (6576 * n**3 + 40690 * n**2 + 87945 * n + 66495) / (2027025 * n**3),
        8 * (26256 * n**3 + 149342 * n**2 + 296205 * n + 205205) / (14189175 * n**3),
    )

    def horner(coeffs):
        acc = np.zeros_like(rho2) + coeffs[-1]
        for c in coeffs[-2::-1]:
            acc = acc * rho2 + c
        return acc

    return horner(gc), horner(hc), horner(qc)


def g_general(u, nu):
    """Closed form g(u) = 2 rho^2/(nu s^2) - 1/s^2 - u rho/s^3."""
    u = np.asarray(u, dtype=float)
    s2 = u * u - 1.0
    s = np.sqrt(s2)
    rho = np.arccosh(-u)
    return 2.0 * rho**2 / (nu * s2) - 1.0 / s2 - u * rho / (s2 * s)


def g_prime_general(u, nu):
    """Analytic dg/du for the general branch."""
    u = np.asarray(u, dtype=float)
    s2 = u * u - 1.0
    s = np.sqrt(s2)
    s3, s4, s5 = s2 * s, s2 * s2, s2 * s2 * s
    rho = np.arccosh(-u)
    return (-4.0 * rho / (nu * s3) - 4.0 * rho**2 * u / (nu * s4)
            + 3.0 * u / s4 - rho / s3 + 3.0 * u**2 * rho / s5)


def h_general(u, nu):
    """h(u) = dg/du + 2 g rho / (nu s)."""
    u = np.asarray(u, dtype=float)
    s = np.sqrt(u * u - 1.0)
    rho = np.arccosh(-u)
    return g_prime_general(u, nu) + 2.0 * g_general(u, nu) * rho / (nu * s)


def h_prime_general(u, nu):
    """Analytic dh/du for the general branch."""
    u = np.asarray(u, dtype=float)
    s2 = u * u - 1.0
    s = np.sqrt(s2)
    s3 = s2 * s
    s4 = s2 * s2
    s5 = s4 * s
    s6 = s4 * s2
    s7 = s6 * s
    rho = np.arccosh(-u)
    return (-12.0 * rho**2 / (nu**2 * s4) - 12.0 * rho**3 * u / (nu**2 * s5)
            + 6.0 / (nu * s4) + 30.0 * rho * u / (nu * s5)
            - 6.0 * rho**2 / (nu * s4) + 24.0 * rho**2 * u**2 / (nu * s6)
            + 4.0 / s4 + 9.0 * rho * u / s5
            - 15.0 * u**2 / s6 - 15.0 * u**3 * rho / s7)


def q_general(u, nu):
    """q(u) = dh/du + 2 h rho / (nu s)."""
    u = np.asarray(u, dtype=float)
    s = np.sqrt(u * u - 1.0)
    rho = np.arccosh(-u)
    return h_prime_general(u, nu) + 2.0 * h_general(u, nu) * rho / (nu * s)


def ghq(u, nu: float, limit_threshold: float = 1e-4):
    """Evaluate (g, h, q) at Lorentzian inner products ``u <= -1``.

    At distances below ``limit_threshold`` the exact coincidence limits are
    returned; between the threshold and the series cutoff the Taylor branch
    is used; beyond it the closed forms.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u > -1.0 + 1e-12):
        raise DomainError("inner product u must be <= -1")
    u = np.minimum(u, -1.0)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    rho = np.arccosh(-u)
    g = np.empty_like(u)
    h = np.empty_like(u)
    q = np.empty_like(u)

    lim = rho <= limit_threshold
    ser = (~lim) & (rho < SERIES_CUTOFF)
    gen = ~(lim | ser)
    if np.any(lim):
        gl, hl, ql = ghq_limits(nu)
        g[lim], h[lim], q[lim] = gl, hl, ql
    if np.any(ser):
        g[ser], h[ser], q[ser] = _ghq_series(rho[ser] ** 2, nu)
    if np.any(gen):
        ug = u[gen]
        g[gen] = g_general(ug, nu)
        h[gen] = h_general(ug, nu)
        q[gen] = q_general(ug, nu)
    if scalar:
        return float(g[0]), float(h[0]), float(q[0])
    return g, h, q


class Hyp3SEKernel:
    """Closed-form squared-exponential kernel on the 3D hyperboloid:
    ``k(x, z) = tau * rho/sinh(rho) * exp(-rho^2 / (2 kappa^2))``.
    """

    manifold = "hyperbolic"
    dim = 3
    # k(x, x) is exactly tau for every x; the ambient extension through
    # <x,x>_L is kinked by clamping and must not be differentiated
    stationary_diag = True

    def __init__(self, tau: float, kappa: float, limit_threshold: float = 1e-4):
        if tau <= 0 or kappa <= 0:
            raise ConfigError("tau and kappa must be positive")
        if limit_threshold <= 0:
            raise ConfigError("limit_threshold must be positive")
        self.tau = float(tau)
        self.kappa = float(kappa)
        self.nu = 2.0 * kappa**2
        self.limit_threshold = float(limit_threshold)

    @property
    def ncoords(self) -> int:
        return self.dim + 1

    def with_hyperparams(self, tau=None, kappa=None) -> "Hyp3SEKernel":
        return Hyp3SEKernel(tau if tau is not None else self.tau,
                            kappa if kappa is not None else self.kappa,
                            self.limit_threshold)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 4:
            raise DimensionError("Hyp3SEKernel expects ambient vectors of length 4")
        return x

    def _u(self, x, z):
        return np.minimum(lorentz.minkowski_inner(x, z), -1.0)

    def value(self, x, z) -> float:
        x, z = self._check(x), self._check(z)
        u = self._u(x, z)
        rho = np.arccosh(-u)
        val = self.tau / lorentz.sinhc(rho) * np.exp(-(rho**2) / self.nu)
        return float(val) if np.ndim(val) == 0 else val

    def gram(self, X) -> np.ndarray:
        X = self._check(X)
        U = np.minimum(lorentz.minkowski_inner(X[:, None, :], X[None, :, :]), -1.0)
        rho = np.arccosh(-U)
        K = self.tau / lorentz.sinhc(rho) * np.exp(-(rho**2) / self.nu)
        np.fill_diagonal(K, self.tau)
        return K

    def cross_value(self, Q, X) -> np.ndarray:
        Q, X = self._check(Q), self._check(X)
        Q2 = np.atleast_2d(Q)
        U = np.minimum(lorentz.minkowski_inner(Q2[:, None, :], X[None, :, :]), -1.0)
        rho = np.arccosh(-U)
        K = self.tau / lorentz.sinhc(rho) * np.exp(-(rho**2) / self.nu)
        return K[0] if Q.ndim == 1 else K

    def _ghq_pair(self, x, z):
        u = self._u(x, z)
        return u, ghq(u, self.nu, self.limit_threshold)

    def grad_x(self, x, z) -> np.ndarray:
        x, z = self._check(x), self._check(z)
        u, (g, _, _) = self._ghq_pair(x, z)
        rho2 = np.arccosh(-u) ** 2
        return self.tau * g * np.exp(-rho2 / self.nu) * lorentz.gl_apply(z)

    def grad_first_many(self, Q, X) -> np.ndarray:
        """d k(q, x_n) / d q for each query row; shape (nq, 4, N)."""
        Q, X = self._check(np.atleast_2d(Q)), self._check(X)
        U = np.minimum(lorentz.minkowski_inner(Q[:, None, :], X[None, :, :]), -1.0)
        g, _, _ = ghq(U.ravel(), self.nu, self.limit_threshold)
        g = g.reshape(U.shape)
        rho2 = np.arccosh(-U) ** 2
        coef = self.tau * g * np.exp(-rho2 / self.nu)       # (nq, N)
        glz = lorentz.gl_apply(X)                            # (N, 4)
        return np.einsum("qn,ni->qin", coef, glz)

    def grad_first(self, x, X) -> np.ndarray:
        return self.grad_first_many(x, X)[0]

    def cross_hessian(self, x, z) -> np.ndarray:
        x, z = self._check(x), self._check(z)
        u, (g, h, _) = self._ghq_pair(x, z)
        rho2 = np.arccosh(-u) ** 2
        e = np.exp(-rho2 / self.nu)
        gl = np.diag(_gl_vec(4))
        glz = lorentz.gl_apply(z)
        glx = lorentz.gl_apply(x)
        return self.tau * (h * np.outer(glz, glx) + g * gl) * e

    def xx_hessian(self, x, z) -> np.ndarray:
        x, z = self._check(x), self._check(z)
        u, (_, h, _) = self._ghq_pair(x, z)
        rho2 = np.arccosh(-u) ** 2
        glz = lorentz.gl_apply(z)
        return self.tau * h * np.outer(glz, glz) * np.exp(-rho2 / self.nu)

    def cross_hessian_diag_many(self, Q) -> np.ndarray:
        """Cross Hessian at coincident inputs for a batch of queries."""
        Q = self._check(np.atleast_2d(Q))
        g_lim, h_lim, _ = ghq_limits(self.nu)
        gl = np.diag(_gl_vec(4))
        glq = lorentz.gl_apply(Q)
        return self.tau * (h_lim * np.einsum("qi,qj->qij", glq, glq)
                           + g_lim * gl[None])

    def xx_hessian_first(self, x, X) -> np.ndarray:
        """d^2 k(x, x_n) / dx^2 stacked over data rows; shape (N, 4, 4)."""
        x, X = self._check(x), self._check(X)
        u = np.minimum(lorentz.minkowski_inner(x, X), -1.0)
        _, h, _ = ghq(u, self.nu, self.limit_threshold)
        rho2 = np.arccosh(-u) ** 2
        coef = self.tau * h * np.exp(-rho2 / self.nu)
        glz = lorentz.gl_apply(X)
        return coef[:, None, None] * np.einsum("ni,nj->nij", glz, glz)

    def third_tensors(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        x, z = self._check(x), self._check(z)
        u, (g, h, q) = self._ghq_pair(x, z)
        rho2 = np.arccosh(-u) ** 2
        e = np.exp(-rho2 / self.nu)
        gl = np.diag(_gl_vec(4))
        glz = lorentz.gl_apply(z)
        glx = lorentz.gl_apply(x)
        # T_x[i,j,k] = (q (Gz)_i (Gx)_j (Gz)_k + h (Gz)_i G_jk + h G_ij (Gz)_k) e
        t_x = (q * np.einsum("i,j,k->ijk", glz, glx, glz)
               + h * np.einsum("i,jk->ijk", glz, gl)
               + h * np.einsum("ij,k->ijk", gl, glz)) * e * self.tau
        # T_z[i,j,k] = (q (Gz)_i (Gx)_j (Gx)_k + h G_ik (Gx)_j + h G_ij (Gx)_k) e
        t_z = (q * np.einsum("i,j,k->ijk", glz, glx, glx)
               + h * np.einsum("ik,j->ijk", gl, glx)
               + h * np.einsum("ij,k->ijk", gl, glx)) * e * self.tau
        return t_x, t_z

    def to_config(self) -> dict:
        return {"type": "hyp3se", "tau": self.tau, "kappa": self.kappa,
                "limit_threshold": self.limit_threshold}


# ---------------------------------------------------------------------------
# 2D hyperbolic SE kernel (Monte Carlo feature approximation)
# ---------------------------------------------------------------------------

class Hyp2SEKernel:
    """Monte Carlo approximation of the 2D hyperbolic SE kernel.


    Features are complex plane waves ``phi_l(p) = exp((1 + 2 i s_l) <p, b_l>)``
    over Poincare coordinates ``p``, with ``b_l`` uniform on the unit circle,
    ``s_l`` half-normal with scale ``1/kappa``, and the hyperbolic outer
    product ``<p, b> = log((1 - |p|^2) / |p - b|^2) / 2``. The normalization
    is chosen so that ``k(mu_0, mu_0) = tau`` exactly.
    """

    manifold = "hyperbolic"
    dim = 2
    # the Monte Carlo estimate of k(x, x) genuinely varies with x
    stationary_diag = False

    def __init__(self, tau: float, kappa: float, n_samples: int = 3000,
                 seed: int = 0, b=None, s_raw=None):
        if tau <= 0 or kappa <= 0:
            raise ConfigError("tau and kappa must be positive")
        if n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        self.tau = float(tau)
        self.kappa = float(kappa)
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        if b is None or s_raw is None:
            rng = np.random.default_rng(seed)
            angles = rng.uniform(0.0, 2.0 * np.pi, self.n_samples)
            self.b = np.column_stack([np.cos(angles), np.sin(angles)])
            # inverse-CDF draws of the unit half-normal; scaled by 1/kappa
            self.s_raw = np.sqrt(2.0) * erfinv(rng.random(self.n_samples))
        else:
            self.b = np.asarray(b, dtype=float)
            self.s_raw = np.asarray(s_raw, dtype=float)
            if self.b.shape != (self.n_samples, 2) or self.s_raw.shape != (self.n_samples,):
                raise ConfigError("sample arrays inconsistent with n_samples")
        self.s = self.s_raw / self.kappa
        self.w = self.s * np.tanh(np.pi * self.s)
        self.c_inf = float(np.mean(self.w))
        if self.c_inf <= 0:
            raise ConfigError("degenerate sample set: normalization is zero")
        # tau / (C_inf * L) premultiplied into the weights
        self._wpref = self.tau / (self.c_inf * self.n_samples) * self.w

    @classmethod
    def from_samples(cls, tau, kappa, b, s, seed=0) -> "Hyp2SEKernel":
        """Build a kernel from explicit sample arrays (s in data units)."""
        s = np.asarray(s, dtype=float)
        return cls(tau, kappa, n_samples=len(s), seed=seed, b=b,
                   s_raw=s * kappa)

    def with_hyperparams(self, tau=None, kappa=None) -> "Hyp2SEKernel":
        """New kernel sharing the raw sample draws, rescaled to new kappa."""
        return Hyp2SEKernel(tau if tau is not None else self.tau,
                            kappa if kappa is not None else self.kappa,
                            self.n_samples, self.seed,
                            b=self.b, s_raw=self.s_raw)

    @property
    def ncoords(self) -> int:
        return self.dim + 1

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 3:
            raise DimensionError("Hyp2SEKernel expects ambient vectors of length 3")
        return x

    # -- feature machinery ---------------------------------------------------

    def features(self, X) -> np.ndarray:
        """Complex feature matrix phi_l(x_n), shape (N, L)."""
        X = self._check(np.atleast_2d(X))
        P = X[:, 1:] / (X[:, 0:1] + 1.0)
        pn2 = np.sum(P * P, axis=1)
        diff = P[:, None, :] - self.b[None, :, :]
        dist2 = np.sum(diff * diff, axis=2)
        t = 0.5 * np.log((1.0 - pn2)[:, None] / dist2)
        return np.exp((1.0 + 2.0j * self.s)[None, :] * t)

    def _query_terms_many(self, Q, need_second=True):
        """Feature values, gradients, and (optionally) Hessians of every
        phi_l at a batch of query points.

        Returns ``(phi (nq, L), dphi (nq, L, 3), d2phi (nq, L, 3, 3))`` in
        ambient coordinates, all complex; ``d2phi`` is None unless requested.
        """
        Q = self._check(np.atleast_2d(Q))
        nq = len(Q)
        p = Q[:, 1:] / (Q[:, 0:1] + 1.0)                 # (nq, 2)
        w0 = 1.0 + Q[:, 0]
        # chart first derivative, (nq, 2, 3)
        jac = np.zeros((nq, 2, 3))
        for i in range(2):
            jac[:, i, 0] = -Q[:, i + 1] / w0**2
            jac[:, i, i + 1] = 1.0 / w0
        pn2 = np.sum(p * p, axis=1)                      # (nq,)
        diff = p[:, None, :] - self.b[None, :, :]        # (nq, L, 2)
        dist2 = np.sum(diff * diff, axis=2)              # (nq, L)
        t = 0.5 * np.log((1.0 - pn2)[:, None] / dist2)
        cs = 1.0 + 2.0j * self.s
        phi = np.exp(cs[None, :] * t)
        a = (p / (pn2 - 1.0)[:, None])[:, None, :] - diff / dist2[..., None]
        jta = np.einsum("qla,qai->qli", a, jac)          # (nq, L, 3)
        c = cs[None, :] * phi
        dphi = c[..., None] * jta
        if not need_second:
            return phi, dphi, None
        # chart second derivative, (nq, 2, 3, 3)
        hess_chart = np.zeros((nq, 2, 3, 3))
        for i in range(2):
            hess_chart[:, i, 0, 0] = 2.0 * Q[:, i + 1] / w0**3
            hess_chart[:, i, 0, i + 1] = -1.0 / w0**2
            hess_chart[:, i, i + 1, 0] = -1.0 / w0**2
        eye2 = np.eye(2)
        # Hessian of the outer product in Poincare coordinates, (nq, L, 2, 2)
        hess_t = (eye2[None, None] / (pn2 - 1.0)[:, None, None, None]
                  - 2.0 * np.einsum("qi,qj->qij", p, p)[:, None]
                  / ((pn2 - 1.0) ** 2)[:, None, None, None]
                  - eye2[None, None] / dist2[..., None, None]
                  + 2.0 * np.einsum("qli,qlj->qlij", diff, diff)
                  / (dist2**2)[..., None, None])
        chart_term = np.einsum("qla,qaij->qlij", a, hess_chart)
        jaj = np.einsum("qai,qlab,qbj->qlij", jac, hess_t, jac)
        inner = (cs[None, :, None, None]
                 * np.einsum("qli,qlk->qlik", jta, jta)
                 + chart_term + jaj)
        d2phi = c[..., None, None] * inner
        return phi, dphi, d2phi

    def _query_terms(self, x):
        phi, dphi, d2phi = self._query_terms_many(x, need_second=True)
        return phi[0], dphi[0], d2phi[0]

    # -- kernel surface --------------------------------------------------------

    def value(self, x, z) -> float:
        phi_x = self.features(x)[0]
        phi_z = self.features(z)[0]
        return float(np.real(np.sum(self._wpref * phi_x * np.conj(phi_z))))

    def gram(self, X, phi=None) -> np.ndarray:
        phi = self.features(X) if phi is None else phi
        return np.real((phi * self._wpref) @ np.conj(phi).T)

    def cross_value(self, Q, X, phi_X=None) -> np.ndarray:
        phi_X = self.features(X) if phi_X is None else phi_X
        phi_Q = self.features(Q)
        K = np.real((phi_Q * self._wpref) @ np.conj(phi_X).T)
        return K[0] if np.asarray(Q).ndim == 1 else K

    def grad_x(self, x, z) -> np.ndarray:
        _, dphi, _ = self._query_terms(x)
        phi_z = self.features(z)[0]
        return np.real(np.sum(self._wpref[:, None] * dphi
                              * np.conj(phi_z)[:, None], axis=0))

    def grad_first(self, x, X, phi_X=None) -> np.ndarray:
        """d k(x, x_n) / dx for all rows of X; shape (3, N)."""
        return self.grad_first_many(x, X, phi_X=phi_X)[0]

    def grad_first_many(self, Q, X, phi_X=None, chunk: int = 256) -> np.ndarray:
        phi_X = self.features(X) if phi_X is None else phi_X
        Q = np.atleast_2d(Q)
        phc = np.conj(phi_X)
        out = np.empty((Q.shape[0], 3, phi_X.shape[0]))
        for lo in range(0, len(Q), chunk):
            _, dphi, _ = self._query_terms_many(Q[lo:lo + chunk],
                                                need_second=False)
            out[lo:lo + chunk] = np.real(
                np.tensordot(dphi * self._wpref[None, :, None], phc,
                             axes=([1], [1])))
        return out

    def cross_hessian_diag_many(self, Q, chunk: int = 256) -> np.ndarray:
        """Cross Hessian at coincident inputs for a batch of queries."""
        Q = np.atleast_2d(Q)
        out = np.empty((len(Q), 3, 3))
        for lo in range(0, len(Q), chunk):
            _, dphi, _ = self._query_terms_many(Q[lo:lo + chunk],
                                                need_second=False)
            out[lo:lo + chunk] = np.real(
                np.einsum("l,qli,qlj->qij", self._wpref, dphi, np.conj(dphi)))
        return out

    def cross_hessian(self, x, z) -> np.ndarray:
        _, dphi_x, _ = self._query_terms(x)
        if np.array_equal(x, z):
            dphi_z = dphi_x
        else:
            _, dphi_z, _ = self._query_terms(z)
        return np.real(np.einsum("l,li,lj->ij", self._wpref, dphi_x,
                                 np.conj(dphi_z)))

    def xx_hessian(self, x, z) -> np.ndarray:
        _, _, d2phi = self._query_terms(x)
        phi_z = self.features(z)[0]
        return np.real(np.einsum("l,lij->ij", self._wpref * np.conj(phi_z),
                                 d2phi))

    def xx_hessian_first(self, x, X, phi_X=None) -> np.ndarray:
        phi_X = self.features(X) if phi_X is None else phi_X
        _, _, d2phi = self._query_terms(x)
        return np.real(np.einsum("l,lij,nl->nij", self._wpref, d2phi,
                                 np.conj(phi_X)))

    def third_tensors(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        _, dphi_x, d2phi_x = self._query_terms(x)
        if np.array_equal(x, z):
            dphi_z, d2phi_z = dphi_x, d2phi_x
        else:
            _, dphi_z, d2phi_z = self._query_terms(z)
        t_x = np.real(np.einsum("l,lik,lj->ijk", self._wpref, d2phi_x,
                                np.conj(dphi_z)))
        t_z = np.real(np.einsum("l,li,ljk->ijk", self._wpref, dphi_x,
                                np.conj(d2phi_z)))
        return t_x, t_z

    def to_config(self) -> dict:
        return {"type": "hyp2se", "tau": self.tau, "kappa": self.kappa,
                "n_samples": self.n_samples, "seed": self.seed}


# ---------------------------------------------------------------------------
# Euclidean SE kernel (baseline)
# ---------------------------------------------------------------------------

class EuclSEKernel:
    """Standard squared-exponential kernel on R^D."""

    manifold = "euclidean"
    stationary_diag = True

    def __init__(self, tau: float, kappa: float, dim: int = 2):
        if tau <= 0 or kappa <= 0:
            raise ConfigError("tau and kappa must be positive")
        self.tau = float(tau)
        self.kappa = float(kappa)
        self.dim = int(dim)

    @property
    def ncoords(self) -> int:
        return self.dim

    def with_hyperparams(self, tau=None, kappa=None) -> "EuclSEKernel":
        return EuclSEKernel(tau if tau is not None else self.tau,
                            kappa if kappa is not None else self.kappa,
                            self.dim)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionError(f"EuclSEKernel expects vectors of length {self.dim}")
        return x

    def value(self, x, z) -> float:
        x, z = self._check(x), self._check(z)
        r2 = np.sum((x - z) ** 2, axis=-1)
        v = self.tau * np.exp(-r2 / (2.0 * self.kappa**2))
        return float(v) if np.ndim(v) == 0 else v

    def gram(self, X) -> np.ndarray:
        X = self._check(X)
        r2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
        return self.tau * np.exp(-r2 / (2.0 * self.kappa**2))

    def cross_value(self, Q, X) -> np.ndarray:
        Q, X = self._check(Q), self._check(X)
        Q2 = np.atleast_2d(Q)
        r2 = np.sum((Q2[:, None, :] - X[None, :, :]) ** 2, axis=-1)
        K = self.tau * np.exp(-r2 / (2.0 * self.kappa**2))
        return K[0] if Q.ndim == 1 else K

    def grad_x(self, x, z) -> np.ndarray:
        x, z = self._check(x), self._check(z)
        gam = 1.0 / self.kappa**2
        return -gam * (x - z) * self.value(x, z)

    def grad_first(self, x, X) -> np.ndarray:
        return self.grad_first_many(x, X)[0]

    def grad_first_many(self, Q, X) -> np.ndarray:
        Q, X = self._check(np.atleast_2d(Q)), self._check(X)
        gam = 1.0 / self.kappa**2
        diff = Q[:, None, :] - X[None, :, :]
        vals = self.tau * np.exp(-np.sum(diff**2, axis=-1) / (2.0 * self.kappa**2))
        return -gam * np.einsum("qn,qni->qin", vals, diff)

    def cross_hessian(self, x, z) -> np.ndarray:
        x, z = self._check(x), self._check(z)
        gam = 1.0 / self.kappa**2
        r = x - z
        return gam * self.value(x, z) * (np.eye(self.dim) - gam * np.outer(r, r))

    def xx_hessian(self, x, z) -> np.ndarray:
        x, z = self._check(x), self._check(z)
        gam = 1.0 / self.kappa**2
        r = x - z
        return gam * self.value(x, z) * (gam * np.outer(r, r) - np.eye(self.dim))

    def xx_hessian_first(self, x, X) -> np.ndarray:
        x, X = self._check(x), self._check(X)
        gam = 1.0 / self.kappa**2
        diff = x[None, :] - X
        vals = self.tau * np.exp(-np.sum(diff**2, axis=-1) / (2.0 * self.kappa**2))
        eye = np.eye(self.dim)
        return gam * vals[:, None, None] * (
            gam * np.einsum("ni,nj->nij", diff, diff) - eye[None])

    def cross_hessian_diag_many(self, Q) -> np.ndarray:
        Q = self._check(np.atleast_2d(Q))
        gam = 1.0 / self.kappa**2
        return np.broadcast_to(gam * self.tau * np.eye(self.dim),
                               (len(Q), self.dim, self.dim)).copy()

    def third_tensors(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        x, z = self._check(x), self._check(z)
        gam = 1.0 / self.kappa**2
        r = x - z
        k = self.value(x, z)
        eye = np.eye(self.dim)
        base = np.einsum("k,ij->ijk", r, eye - gam * np.outer(r, r))
        mixed = np.einsum("ik,j->ijk", eye, r) + np.einsum("i,jk->ijk", r, eye)
        t_x = -gam**2 * k * (base + mixed)
        return t_x, -t_x

    def to_config(self) -> dict:
        return {"type": "euclse", "tau": self.tau, "kappa": self.kappa,
                "dim": self.dim}


def kernel_from_config(cfg: dict):
    """Rebuild a kernel from its serialized configuration dict."""
    kind = cfg.get("type")
    if kind == "hyp3se":
        return Hyp3SEKernel(cfg["tau"], cfg["kappa"],
                            cfg.get("limit_threshold", 1e-4))
    if kind == "hyp2se":
        if "b" in cfg and "s_raw" in cfg:
            return Hyp2SEKernel(cfg["tau"], cfg["kappa"], cfg["n_samples"],
                                cfg["seed"], b=cfg["b"], s_raw=cfg["s_raw"])
        return Hyp2SEKernel(cfg["tau"], cfg["kappa"], cfg["n_samples"],
                            cfg["seed"])
    if kind == "euclse":
        return EuclSEKernel(cfg["tau"], cfg["kappa"], cfg["dim"])
    raise ConfigError(f"unknown kernel type {kind!r}")
