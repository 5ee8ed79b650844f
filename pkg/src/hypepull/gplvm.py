"""GP latent variable model with hyperbolic or Euclidean latent space.

Covers Gram/likelihood machinery, posterior prediction, the posterior over
the Jacobian of the latent-to-observation map, and MAP training with the
supported priors (wrapped Gaussian on latents, graph-distance stress,
first-order dynamics, Gamma hyperpriors, back constraints).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import lorentz
from .errors import (ConfigError, DataError, NumericError,
                     UnsupportedOperationError)
from .kernels import EuclSEKernel
from .optim import RiemannianAdam

_JITTER_MAX = 1e-2


def _coth_minus_inv(r):
    """coth(r) - 1/r, the derivative of log(sinh(r)/r); series-safe."""
    r = np.asarray(r, dtype=float)
    small = r < 1e-4
    safe = np.where(small, 1.0, r)
    out = np.where(small, r / 3.0, 1.0 / np.tanh(safe) - 1.0 / safe)
    return out if out.ndim else float(out)


def _l_over_r(r):
    """(coth(r) - 1/r) / r with the limit 1/3 at r = 0."""
    r = np.asarray(r, dtype=float)
    small = r < 1e-4
    safe = np.where(small, 1.0, r)
    out = np.where(small, 1.0 / 3.0, _coth_minus_inv(safe) / safe)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass
class GraphPrior:
    """Graph-distance stress prior matching latent distances to node distances."""

    node_dist: np.ndarray          # (K, K) symmetric, zero diagonal
    assignment: np.ndarray         # (N,) data row -> node index
    weight: float = 1.0
    mode: str = "sum"              # "sum" or "mean" over pairs
    rows: np.ndarray | None = None  # subset of data rows to score (default all)

    def __post_init__(self):
        self.node_dist = np.asarray(self.node_dist, dtype=float)
        self.assignment = np.asarray(self.assignment, dtype=int)
        d = self.node_dist
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DataError("node distance matrix must be square")
        if not np.allclose(d, d.T, atol=1e-12):
            raise DataError("node distance matrix must be symmetric")
        if np.any(np.diag(d) != 0):
            raise DataError("node distance matrix must have zero diagonal")
        if np.any(d < 0):
            raise DataError("node distances must be nonnegative")
        if np.any(self.assignment < 0) or np.any(self.assignment >= d.shape[0]):
            raise DataError("assignment references nonexistent graph nodes")
        if self.mode not in ("sum", "mean"):
            raise ConfigError(f"unknown stress mode {self.mode!r}")
        if self.rows is not None:
            self.rows = np.asarray(self.rows, dtype=int)

    def target_matrix(self) -> np.ndarray:
        """Pairwise graph distances for the scored data rows."""
        rows = np.arange(len(self.assignment)) if self.rows is None else self.rows
        c = self.assignment[rows]
        return self.node_dist[np.ix_(c, c)]


@dataclass
class TrajectoryPrior:
    """First-order random-walk prior over ordered trajectory segments."""

    starts: np.ndarray             # segment start indices; first must be 0
    sigma_dyn2: float = 0.01
    weight: float = 1.0

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=int)
        if len(self.starts) == 0 or self.starts[0] != 0:
            raise DataError("trajectory starts must begin at row 0")
        if np.any(np.diff(self.starts) <= 0):
            raise DataError("trajectory starts must be strictly increasing")
        if self.sigma_dyn2 <= 0:
            raise ConfigError("sigma_dyn2 must be positive")

    def segments(self, n: int):
        if np.any(self.starts >= n):
            raise DataError("trajectory start index out of range")
        bounds = list(self.starts) + [n]
        return [(bounds[i], bounds[i + 1]) for i in range(len(self.starts))]


@dataclass
class BackConstraint:
    """Latents parameterized as a kernel-smooth map of the observations:
    tangent coordinates at the origin are rows of k(Y, Y) C, pushed through
    the exponential map (identity lift for Euclidean models).
    """

    coeff: np.ndarray              # (N, D_x)
    kyy: np.ndarray                # (N, N) constraint-kernel Gram of Y

    @classmethod
    def from_data(cls, Y, latent_init, tau=1.0, kappa=0.4,
                  manifold="hyperbolic"):
        """Fit coefficients reproducing an initial latent configuration."""
        Y = np.asarray(Y, dtype=float)
        kern = EuclSEKernel(tau=tau, kappa=kappa, dim=Y.shape[1])
        kyy = kern.gram(Y)
        if manifold == "hyperbolic":
            v0 = np.stack([lorentz.logmap(lorentz.origin(x.shape[-1] - 1), x,
                                          validate=False)[1:]
                           for x in latent_init])
        else:
            v0 = np.asarray(latent_init, dtype=float)
        coeff = np.linalg.solve(kyy + 1e-8 * np.eye(len(Y)), v0)
        return cls(coeff=coeff, kyy=kyy)

    def latents(self, manifold: str) -> np.ndarray:
        v = self.kyy @ self.coeff
        if manifold == "euclidean":
            return v
        vt = np.concatenate([np.zeros((len(v), 1)), v], axis=1)
        mu0 = lorentz.origin(v.shape[1])
        return lorentz.renormalize(lorentz.expmap(mu0, vt, validate=False))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class LatentModel:
    """GP(H)LVM over N latent points with cached Gram factorization."""

    def __init__(self, X, Y, kernel, noise_var, jitter=1e-6, obs_mean=None):
        if noise_var <= 0:
            raise ConfigError("noise_var must be positive")
        if jitter < 0:
            raise ConfigError("jitter must be nonnegative")
        self.kernel = kernel
        self.manifold = kernel.manifold
        self.X = np.asarray(X, dtype=float).reshape(-1, kernel.ncoords)
        self.Y = np.asarray(Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if len(self.Y) != len(self.X):
            raise ConfigError("X and Y row counts differ")
        self.noise_var = float(noise_var)
        self.jitter = float(jitter)
        self.obs_mean = (np.zeros(self.Y.shape[1]) if obs_mean is None
                         else np.asarray(obs_mean, dtype=float))
        self._cache = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_data(cls, Y, kernel, noise_var, jitter=1e-6, center=True,
                  init="pca", rng=None):
        """Center observations and initialize latents (PCA in the tangent
        space of the origin for hyperbolic models)."""
        Y = np.asarray(Y, dtype=float)
        mean = Y.mean(axis=0) if center else np.zeros(Y.shape[1])
        Yc = Y - mean
        d = kernel.dim if kernel.manifold == "hyperbolic" else kernel.ncoords
        scores = pca_scores(Yc, d)
        if init == "random":
            rng = np.random.default_rng(0) if rng is None else rng
            scores = 0.3 * rng.standard_normal(scores.shape)
        if kernel.manifold == "hyperbolic":
            v = np.concatenate([np.zeros((len(Yc), 1)), scores], axis=1)
            X = lorentz.renormalize(
                lorentz.expmap(lorentz.origin(d), v, validate=False))
        else:
            X = scores
        return cls(X, Yc, kernel, noise_var, jitter, obs_mean=mean)

    def with_updates(self, X=None, kernel=None, noise_var=None) -> "LatentModel":
        m = LatentModel(self.X if X is None else X, self.Y,
                        self.kernel if kernel is None else kernel,
                        self.noise_var if noise_var is None else noise_var,
                        self.jitter, self.obs_mean)
        return m

    @property
    def n_points(self) -> int:
        return len(self.X)

    @property
    def d_out(self) -> int:
        return self.Y.shape[1]

    def set_latents(self, X) -> None:
        self.X = np.asarray(X, dtype=float).reshape(-1, self.kernel.ncoords)
        self._cache = None

    # -- cached factorization ---------------------------------------------------

    def _features(self):
        if hasattr(self.kernel, "features"):
            return self.kernel.features(self.X)
        return None

    def _build_cache(self):
        n = self.n_points
        phi = self._features()
        if n == 0:
            self._cache = {"phi": phi, "chol": None, "alpha":
                           np.zeros((0, self.d_out)), "logdet": 0.0, "K": np.zeros((0, 0))}
            return
        if phi is not None:
            K = self.kernel.gram(self.X, phi=phi)
        else:
            K = self.kernel.gram(self.X)
        jitter = max(self.jitter, 0.0)
        while True:
            try:
                kt = K + (self.noise_var + jitter) * np.eye(n)
                c, low = cho_factor(kt, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                jitter = 1e-8 if jitter == 0 else jitter * 10.0
                if jitter > _JITTER_MAX:
                    raise NumericError(
                        "Gram factorization failed even at jitter "
                        f"{_JITTER_MAX:g}") from None
        self._cache = {
            "phi": phi,
            "chol": (c, low),
            "alpha": cho_solve((c, low), self.Y, check_finite=False),
            "logdet": 2.0 * float(np.sum(np.log(np.diag(c)))),
            "K": K,
            "jitter": jitter,
        }

    @property
    def cache(self) -> dict:
        if self._cache is None:
            self._build_cache()
        return self._cache

    def gram(self) -> np.ndarray:
        """Kernel matrix plus noise and jitter (the factored matrix)."""
        c = self.cache
        n = self.n_points
        return c["K"] + (self.noise_var + c.get("jitter", self.jitter)) * np.eye(n)

    # -- likelihood and prediction ---------------------------------------------

    def log_marginal_likelihood(self) -> float:
        c = self.cache
        n, d = self.n_points, self.d_out
        if n == 0:
            return 0.0
        quad = float(np.sum(self.Y * c["alpha"]))
        return -0.5 * quad - 0.5 * d * c["logdet"] - 0.5 * n * d * np.log(2 * np.pi)

    def _cross_value(self, Q):
        if self.cache["phi"] is not None:
            return self.kernel.cross_value(Q, self.X, phi_X=self.cache["phi"])
        return self.kernel.cross_value(Q, self.X)

    def _diag_value(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if hasattr(self.kernel, "features"):
            phi = self.kernel.features(Q)
            return np.real(np.sum(self.kernel._wpref * phi * np.conj(phi), axis=1))
        return np.full(len(Q), self.kernel.tau)

    def posterior_predict(self, Q):
        """Posterior mean and (shared, noise-free) variance at query latents.

        Means are in centered observation coordinates.
        """
        Q = np.asarray(Q, dtype=float)
        single = Q.ndim == 1
        Q2 = np.atleast_2d(Q)
        if self.n_points == 0:
            means = np.zeros((len(Q2), self.d_out))
            vars_ = self._diag_value(Q2)
        else:
            kq = np.atleast_2d(self._cross_value(Q2))
            means = kq @ self.cache["alpha"]
            sol = cho_solve(self.cache["chol"], kq.T, check_finite=False)
            vars_ = np.maximum(self._diag_value(Q2) - np.sum(kq * sol.T, axis=1),
                               0.0)
        if single:
            return means[0], float(vars_[0])
        return means, vars_

    def _grad_first(self, x):
        if self.cache["phi"] is not None:
            return self.kernel.grad_first(x, self.X, phi_X=self.cache["phi"])
        return self.kernel.grad_first(x, self.X)

    def _grad_first_many(self, Q):
        if self.cache["phi"] is not None:
            return self.kernel.grad_first_many(Q, self.X,
                                               phi_X=self.cache["phi"])
        return self.kernel.grad_first_many(Q, self.X)

    def _xx_hessian_first(self, x):
        if self.cache["phi"] is not None:
            return self.kernel.xx_hessian_first(x, self.X,
                                                phi_X=self.cache["phi"])
        return self.kernel.xx_hessian_first(x, self.X)

    def jacobian_posterior(self, x):
        """Gaussian posterior over the ambient Jacobian of the GP map at x.

        Returns ``(mu_J, Sigma_J)`` with ``mu_J`` of shape (D_y, ncoords)
        whose rows are the ambient gradients of the posterior mean, and the
        shared row covariance ``Sigma_J`` (symmetrized).
        """
        x = np.asarray(x, dtype=float)
        nc = self.kernel.ncoords
        if self.n_points == 0:
            sigma = self.kernel.cross_hessian(x, x)
            return np.zeros((self.d_out, nc)), 0.5 * (sigma + sigma.T)
        dk = self._grad_first(x)                       # (nc, N)
        mu = (dk @ self.cache["alpha"]).T              # (D_y, nc)
        sol = cho_solve(self.cache["chol"], dk.T, check_finite=False)      # (N, nc)
        sigma = self.kernel.cross_hessian(x, x) - dk @ sol
        return mu, 0.5 * (sigma + sigma.T)

    def riemannian_jacobian_posterior(self, x):
        """Tangent-projected Jacobian posterior (hyperbolic models only)."""
        if self.manifold != "hyperbolic":
            raise UnsupportedOperationError(
                "Riemannian Jacobian posterior requires a hyperbolic model")
        mu, sigma = self.jacobian_posterior(x)
        p = lorentz.projector_matrix(x)
        return mu @ p.T, p @ sigma @ p.T


# ---------------------------------------------------------------------------
# prior evaluation (module-level ops)
# ---------------------------------------------------------------------------

def pca_scores(Y, d):
    Y = np.asarray(Y, dtype=float)
    Yc = Y - Y.mean(axis=0)
    if len(Y) == 0:
        return np.zeros((0, d))
    _, _, vt = np.linalg.svd(Yc, full_matrices=False)
    comps = vt[:d]
    if comps.shape[0] < d:
        comps = np.vstack([comps, np.zeros((d - comps.shape[0], Y.shape[1]))])
    return Yc @ comps.T


def _pairwise_distance(X, manifold):
    if manifold == "hyperbolic":
        beta = np.maximum(-lorentz.minkowski_inner(X[:, None, :], X[None, :, :]),
                          1.0)
        return np.arccosh(beta)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), 0.0))


def stress_loss(X, prior: GraphPrior, manifold: str = "hyperbolic") -> float:
    """Squared mismatch between latent and graph distances over scored pairs."""
    X = np.asarray(X, dtype=float)
    rows = np.arange(len(X)) if prior.rows is None else prior.rows
    target = prior.target_matrix()
    d = _pairwise_distance(X[rows], manifold)
    iu = np.triu_indices(len(rows), k=1)
    sq = (target[iu] - d[iu]) ** 2
    total = float(np.sum(sq))
    if prior.mode == "mean" and len(sq) > 0:
        total /= len(sq)
    return total


def stress_gradient(X, prior: GraphPrior, manifold: str) -> np.ndarray:
    """Riemannian gradient of the stress loss at each latent point."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    rows = np.arange(n) if prior.rows is None else prior.rows
    xs = X[rows]
    m = len(rows)
    target = prior.target_matrix()
    grad = np.zeros_like(X)
    if m < 2:
        return grad
    if manifold == "hyperbolic":
        beta = np.maximum(-lorentz.minkowski_inner(xs[:, None, :], xs[None, :, :]),
                          1.0)
        d = np.arccosh(beta)
        # Log_{x_i}(x_j) for all pairs
        fac = 1.0 / lorentz.sinhc(d)
        logs = fac[:, :, None] * (xs[None, :, :] - beta[:, :, None] * xs[:, None, :])
    else:
        diff = xs[None, :, :] - xs[:, None, :]
        d = np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), 0.0))
        logs = diff
    # d stress / d d_ij = 2 (d - target); grad_{x_i} d = -Log_{x_i}(x_j)/d
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(d > 1e-12, -2.0 * (d - target) / d, 0.0)
    np.fill_diagonal(coef, 0.0)
    g = np.einsum("ij,ijc->ic", coef, logs)
    if prior.mode == "mean":
        g /= m * (m - 1) / 2
    grad[rows] = g
    return grad


def _pair_logpdf_isotropic(x_from, x_to, sigma2, manifold):
    """log N(x_to | x_from, sigma2 I); wrapped Gaussian on the hyperboloid."""
    if manifold == "hyperbolic":
        d = x_from.shape[-1] - 1
        r = lorentz.distance(x_from, x_to, validate=False)
        return (-0.5 * d * np.log(2 * np.pi * sigma2) - 0.5 * r * r / sigma2
                - (d - 1) * np.log(lorentz.sinhc(r)))
    d = x_from.shape[-1]
    r2 = float(np.sum((x_to - x_from) ** 2))
    return -0.5 * d * np.log(2 * np.pi * sigma2) - 0.5 * r2 / sigma2


def dynamics_logprior(X, prior: TrajectoryPrior, manifold: str = "hyperbolic") -> float:
    """First-order random-walk log-density over within-trajectory steps."""
    X = np.asarray(X, dtype=float)
    total = 0.0
    for a, b in prior.segments(len(X)):
        for t in range(a, b - 1):
            total += _pair_logpdf_isotropic(X[t], X[t + 1], prior.sigma_dyn2,
                                            manifold)
    return float(total)


def dynamics_gradient(X, prior: TrajectoryPrior, manifold: str) -> np.ndarray:
    """Riemannian gradient of the dynamics log-prior."""
    X = np.asarray(X, dtype=float)
    grad = np.zeros_like(X)
    s2 = prior.sigma_dyn2
    d = X.shape[1] - 1 if manifold == "hyperbolic" else X.shape[1]
    for a, b in prior.segments(len(X)):
        for t in range(a, b - 1):
            if manifold == "hyperbolic":
                r = lorentz.distance(X[t], X[t + 1], validate=False)
                c = 1.0 / s2 + (d - 1) * _l_over_r(r)
                grad[t + 1] += c * lorentz.logmap(X[t + 1], X[t], validate=False)
                grad[t] += c * lorentz.logmap(X[t], X[t + 1], validate=False)
            else:
                diff = X[t + 1] - X[t]
                grad[t + 1] += -diff / s2
                grad[t] += diff / s2
    return grad


def latent_prior_logpdf(X, alpha, manifold):
    """Isotropic prior at the origin: wrapped Gaussian or standard normal."""
    X = np.asarray(X, dtype=float)
    if manifold == "hyperbolic":
        d = X.shape[1] - 1
        mu0 = lorentz.origin(d)
        r = lorentz.distance(mu0[None, :], X, validate=False)
        vals = (-0.5 * d * np.log(2 * np.pi * alpha) - 0.5 * r * r / alpha
                - (d - 1) * np.log(lorentz.sinhc(r)))
        return float(np.sum(vals))
    d = X.shape[1]
    return float(np.sum(-0.5 * d * np.log(2 * np.pi * alpha)
                        - 0.5 * np.sum(X * X, axis=1) / alpha))


def latent_prior_gradient(X, alpha, manifold):
    X = np.asarray(X, dtype=float)
    if manifold == "hyperbolic":
        d = X.shape[1] - 1
        mu0 = lorentz.origin(d)
        r = lorentz.distance(mu0[None, :], X, validate=False)
        c = 1.0 / alpha + (d - 1) * _l_over_r(r)
        return c[:, None] * lorentz.logmap(X, mu0[None, :], validate=False)
    return -X / alpha


def _gamma_logpdf(theta, conc, rate):
    return (conc - 1.0) * np.log(theta) - rate * theta


def stress_minimizing_init(model: LatentModel, prior: GraphPrior,
                           traj_starts=None, steps: int = 300,
                           lr: float = 0.05, noise: float = 0.05,
                           seed: int = 0) -> np.ndarray:
    """Latent initialization that first places the stress-scored points by
    minimizing the stress loss alone, then (for trajectory data) connects
    each trajectory's endpoints with a geodesic plus a little noise."""
    from . import lorentz as _l

    manifold = model.manifold
    rows = (np.arange(model.n_points) if prior.rows is None else prior.rows)
    kind = "lorentz" if manifold == "hyperbolic" else "euclidean"
    opt = RiemannianAdam(lr=lr)
    pts = model.X[rows].copy()
    opt.register("pts", pts, kind)
    sub = _subset_prior(prior, rows)
    for _ in range(steps):
        grad = stress_gradient(np.asarray(pts), sub, manifold)
        pts = opt.step({"pts": pts}, {"pts": grad})["pts"]
    X = model.X.copy()
    X[rows] = pts
    if traj_starts is None:
        return X
    rng = np.random.default_rng(seed)
    bounds = list(traj_starts) + [model.n_points]
    for a, b in zip(bounds[:-1], bounds[1:]):
        m = b - a
        if m < 2:
            continue
        ts = np.linspace(0.0, 1.0, m)
        if manifold == "hyperbolic":
            u = _l.logmap(X[a], X[b - 1], validate=False)
            mid = _l.expmap(X[a], ts[:, None] * u, validate=False)
            jitter = noise * rng.standard_normal((m, X.shape[1]))
            mid[1:-1] += np.stack([
                _l.project_to_tangent(p, w, validate=False)
                for p, w in zip(mid[1:-1], jitter[1:-1])])
            X[a:b] = _l.renormalize(mid)
        else:
            line = X[a] + ts[:, None] * (X[b - 1] - X[a])
            line[1:-1] += noise * rng.standard_normal((m - 2, X.shape[1]))
            X[a:b] = line
    return X


def _subset_prior(prior: GraphPrior, rows) -> GraphPrior:
    """Prior re-indexed to score exactly the given rows 0..len(rows)-1."""
    return GraphPrior(node_dist=prior.node_dist,
                      assignment=prior.assignment[rows],
                      weight=prior.weight, mode=prior.mode)


# ---------------------------------------------------------------------------
# MAP training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 0.05
    optimize_hyperparams: bool = False
    latent_prior_alpha: float | None = None
    kappa_gamma: tuple[float, float] | None = None   # (concentration, rate)
    tau_gamma: tuple[float, float] | None = None
    hyper_fd_step: float = 1e-4
    seed: int = 0


@dataclass
class Priors:
    graph: GraphPrior | None = None
    trajectory: TrajectoryPrior | None = None
    back: BackConstraint | None = None


def objective_terms(model: LatentModel, priors: Priors,
                    config: TrainConfig) -> dict:
    """All additive terms of the MAP objective (to be maximized)."""
    terms = {"loglik": model.log_marginal_likelihood()}
    if priors.graph is not None:
        terms["stress"] = -priors.graph.weight * stress_loss(
            model.X, priors.graph, model.manifold)
    if priors.trajectory is not None:
        terms["dynamics"] = priors.trajectory.weight * dynamics_logprior(
            model.X, priors.trajectory, model.manifold)
    if config.latent_prior_alpha is not None:
        terms["latent_prior"] = latent_prior_logpdf(
            model.X, config.latent_prior_alpha, model.manifold)
    if config.kappa_gamma is not None:
        terms["kappa_prior"] = _gamma_logpdf(model.kernel.kappa,
                                             *config.kappa_gamma)
    if config.tau_gamma is not None:
        terms["tau_prior"] = _gamma_logpdf(model.kernel.tau, *config.tau_gamma)
    return terms


def _loglik_gradient_latents(model: LatentModel) -> np.ndarray:
    """Ambient gradient of the log marginal likelihood w.r.t. each latent."""
    c = model.cache
    n = model.n_points
    kt_inv = cho_solve(c["chol"], np.eye(n), check_finite=False)
    alpha = c["alpha"]
    w = 0.5 * (alpha @ alpha.T - model.d_out * kt_inv)
    gp = model._grad_first_many(model.X)     # (N, nc, N): d k(x_n, x_m) / d x_n
    if getattr(model.kernel, "stationary_diag", False):
        # constant Gram diagonal contributes no gradient
        idx = np.arange(n)
        gp[idx, :, idx] = 0.0
    return 2.0 * np.einsum("nim,nm->ni", gp, w)


def riemannian_objective_gradient(model: LatentModel, priors: Priors,
                                  config: TrainConfig) -> np.ndarray:
    """Riemannian gradient of the total objective w.r.t. the latent points."""
    amb = _loglik_gradient_latents(model)
    if model.manifold == "hyperbolic":
        grad = lorentz.project_to_tangent(model.X, amb, validate=False)
    else:
        grad = amb
    if priors.graph is not None:
        grad += -priors.graph.weight * stress_gradient(model.X, priors.graph,
                                                       model.manifold)
    if priors.trajectory is not None:
        grad += priors.trajectory.weight * dynamics_gradient(
            model.X, priors.trajectory, model.manifold)
    if config.latent_prior_alpha is not None:
        grad += latent_prior_gradient(model.X, config.latent_prior_alpha,
                                      model.manifold)
    return grad


def _dexp_origin(v):
    """Differential of Exp at the origin applied to a tangent lift v (v0 = 0)."""
    nc = v.shape[-1]
    mu0 = lorentz.origin(nc - 1)
    r = float(np.sqrt(np.sum(v[1:] ** 2)))
    if r < 1e-8:
        sc = 1.0 + r * r / 6.0
        m3 = 1.0 / 3.0 + r * r / 30.0
    else:
        sc = np.sinh(r) / r
        m3 = (r * np.cosh(r) - np.sinh(r)) / r**3
    return sc * (np.outer(mu0, v) + np.eye(nc)) + m3 * np.outer(v, v)


def _back_constraint_gradient(back: BackConstraint, model: LatentModel,
                              riem_grad: np.ndarray) -> np.ndarray:
    """Chain the Riemannian latent gradient back onto the coefficients."""
    if model.manifold == "euclidean":
        return back.kyy @ riem_grad
    v = back.kyy @ back.coeff
    vt = np.concatenate([np.zeros((len(v), 1)), v], axis=1)
    rows = np.empty_like(v)
    for n in range(len(v)):
        de = _dexp_origin(vt[n])
        rows[n] = (de.T @ lorentz.gl_apply(riem_grad[n]))[1:]
    return back.kyy @ rows


def _hyperparam_fd_gradient(model: LatentModel, priors: Priors,
                            config: TrainConfig) -> np.ndarray:
    """Central FD of the objective over (log tau, log kappa, log noise_var)."""
    log0 = np.log([model.kernel.tau, model.kernel.kappa, model.noise_var])

    def obj_at(logh):
        kern = model.kernel.with_hyperparams(tau=np.exp(logh[0]),
                                             kappa=np.exp(logh[1]))
        m = model.with_updates(kernel=kern, noise_var=float(np.exp(logh[2])))
        return sum(objective_terms(m, priors, config).values())

    g = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = config.hyper_fd_step
        g[i] = (obj_at(log0 + e) - obj_at(log0 - e)) / (2 * config.hyper_fd_step)
    return g


def train_map(model: LatentModel, priors: Priors | None,
              config: TrainConfig):
    """MAP training with Riemannian Adam; returns (best model, trace rows).

    Trace rows are dicts with the step index, total objective, and each
    objective term. The best-objective iterate is returned.
    """
    priors = priors or Priors()
    opt = RiemannianAdam(lr=config.lr)
    kind = "lorentz" if model.manifold == "hyperbolic" else "euclidean"
    if priors.back is not None:
        opt.register("C", priors.back.coeff, "euclidean")
        model.set_latents(priors.back.latents(model.manifold))
    else:
        opt.register("X", model.X, kind)
    if config.optimize_hyperparams:
        log_hyp = np.log([model.kernel.tau, model.kernel.kappa,
                          model.noise_var])
        opt.register("hyp", log_hyp, "euclidean")

    def total_and_terms(m):
        terms = objective_terms(m, priors, config)
        return sum(terms.values()), terms

    obj, terms = total_and_terms(model)
    _check_finite_terms(terms, step=0)
    trace = [{"step": 0, "objective": obj, **terms}]
    best = (obj, model.X.copy(), model.kernel, model.noise_var)

    for step in range(1, config.steps + 1):
        grad = riemannian_objective_gradient(model, priors, config)
        values = {}
        grads = {}
        if priors.back is not None:
            values["C"] = priors.back.coeff
            grads["C"] = -_back_constraint_gradient(priors.back, model, grad)
        else:
            values["X"] = model.X
            grads["X"] = -grad          # minimize the negative objective
        if config.optimize_hyperparams:
            values["hyp"] = log_hyp
            grads["hyp"] = -_hyperparam_fd_gradient(model, priors, config)
        if any(not np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericError(f"non-finite gradient at training step {step}")
        new = opt.step(values, grads)
        if priors.back is not None:
            priors.back.coeff = new["C"]
            model.set_latents(priors.back.latents(model.manifold))
        else:
            model.set_latents(new["X"])
        if config.optimize_hyperparams:
            log_hyp = new["hyp"]
            model.kernel = model.kernel.with_hyperparams(
                tau=float(np.exp(log_hyp[0])), kappa=float(np.exp(log_hyp[1])))
            model.noise_var = float(np.exp(log_hyp[2]))
            model._cache = None
        obj, terms = total_and_terms(model)
        _check_finite_terms(terms, step)
        trace.append({"step": step, "objective": obj, **terms})
        if obj > best[0]:
            best = (obj, model.X.copy(), model.kernel, model.noise_var)

    final = model.with_updates(X=best[1], kernel=best[2], noise_var=best[3])
    return final, trace


def _check_finite_terms(terms: dict, step: int) -> None:
    for name, val in terms.items():
        if not np.isfinite(val):
            raise NumericError(
                f"objective term {name!r} is non-finite at step {step}")
