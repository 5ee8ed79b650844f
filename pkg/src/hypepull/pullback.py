"""Expected pullback metric of the latent-to-observation GP map, its
derivative tensor, Wishart parameters, and the metric volume.

The stochastic map induces a Gaussian over its Jacobian; the metric
J^T J then follows a non-central Wishart distribution whose mean is
``mu_J^T mu_J + D_y Sigma_J``. Hyperbolic models sandwich this between
tangent projectors, so the metric annihilates the normal direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from . import lorentz
from .errors import NumericError, UnsupportedOperationError
from .gplvm import LatentModel


@dataclass
class WishartParams:
    dof: int
    scale: np.ndarray          # row covariance of the (projected) Jacobian
    noncentrality: np.ndarray  # E[J]^T E[J]


@dataclass
class MetricEval:
    point: np.ndarray
    G: np.ndarray
    manifold: str = "hyperbolic"
    dG: np.ndarray | None = None
    wishart: WishartParams | None = None


def _metric_core(model: LatentModel, x):
    mu, sigma = model.jacobian_posterior(x)
    return mu, sigma, mu.T @ mu + model.d_out * sigma


def expected_metric_euclidean(model: LatentModel, x,
                              with_wishart: bool = False) -> MetricEval:
    """Mean of the Wishart-distributed pullback metric for Euclidean latents."""
    if model.manifold != "euclidean":
        raise UnsupportedOperationError("model is not Euclidean")
    mu, sigma, core = _metric_core(model, x)
    g = 0.5 * (core + core.T)
    wish = WishartParams(model.d_out, sigma, mu.T @ mu) if with_wishart else None
    return MetricEval(point=np.asarray(x, dtype=float), G=g,
                      manifold="euclidean", wishart=wish)


def expected_metric_hyperbolic(model: LatentModel, x,
                               with_wishart: bool = False) -> MetricEval:
    """Projector-sandwiched expected pullback metric for hyperbolic latents."""
    if model.manifold != "hyperbolic":
        raise UnsupportedOperationError("model is not hyperbolic")
    mu, sigma, core = _metric_core(model, x)
    p = lorentz.projector_matrix(x)
    g = p @ core @ p.T
    g = 0.5 * (g + g.T)
    wish = None
    if with_wishart:
        mu_t = mu @ p.T
        wish = WishartParams(model.d_out, p @ sigma @ p.T, mu_t.T @ mu_t)
    return MetricEval(point=np.asarray(x, dtype=float), G=g,
                      manifold="hyperbolic", wishart=wish)


def expected_metric(model: LatentModel, x, with_wishart: bool = False) -> MetricEval:
    if model.manifold == "hyperbolic":
        return expected_metric_hyperbolic(model, x, with_wishart)
    return expected_metric_euclidean(model, x, with_wishart)


def expected_metric_many(model: LatentModel, Q) -> np.ndarray:
    """Expected metric at a batch of query points; shape (nq, nc, nc).

    Each query's computation is self-contained, so results are identical
    under any partitioning of the batch.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    nq = len(Q)
    nc = model.kernel.ncoords
    out = np.empty((nq, nc, nc))
    if model.n_points == 0:
        for i, x in enumerate(Q):
            out[i] = expected_metric(model, x).G
        return out
    dks = model._grad_first_many(Q)                      # (nq, nc, N)
    alpha = model.cache["alpha"]
    d2k = model.kernel.cross_hessian_diag_many(Q)        # (nq, nc, nc)
    # one factorized solve for all queries at once
    rhs = dks.reshape(nq * nc, -1).T                     # (N, nq*nc)
    sol = cho_solve(model.cache["chol"], rhs).T.reshape(nq, nc, -1)
    mus = np.einsum("qin,nd->qdi", dks, alpha)           # (nq, D_y, nc)
    sigmas = d2k - np.einsum("qin,qjn->qij", dks, sol)
    sigmas = 0.5 * (sigmas + np.swapaxes(sigmas, 1, 2))
    cores = (np.einsum("qdi,qdj->qij", mus, mus)
             + model.d_out * sigmas)
    if model.manifold == "hyperbolic":
        gl = np.eye(nc)
        gl[0, 0] = -1.0
        ps = gl[None] + np.einsum("qi,qj->qij", Q, Q)
        cores = np.einsum("qia,qab,qjb->qij", ps, cores, ps)
    out[:] = 0.5 * (cores + np.swapaxes(cores, 1, 2))
    return out


def metric_volume(me: MetricEval) -> float:
    """Volume element sqrt(det) of the metric; hyperbolic metrics discard
    the structurally-zero eigenvalue along the normal direction."""
    eig = np.linalg.eigvalsh(me.G)
    if me.manifold == "hyperbolic":
        drop = int(np.argmin(np.abs(eig)))
        eig = np.delete(eig, drop)
    prod = float(np.prod(eig))
    if prod < -1e-9:
        raise NumericError(f"negative metric determinant {prod:.3g}")
    return float(np.sqrt(max(prod, 0.0)))


def metric_derivative(model: LatentModel, x) -> np.ndarray:
    """Derivative tensor dG[i, j, k] = d G[i, j] / d x_k of the expected
    pullback metric, including the projector product-rule terms for
    hyperbolic models."""
    x = np.asarray(x, dtype=float)
    nc = model.kernel.ncoords
    kern = model.kernel
    if not hasattr(kern, "third_tensors"):
        raise UnsupportedOperationError("kernel provides no third derivatives")

    t_x, t_z = kern.third_tensors(x, x)
    dd2k = t_x + t_z                                     # (nc, nc, nc)

    if model.n_points == 0:
        mu = np.zeros((model.d_out, nc))
        dmu = np.zeros((model.d_out, nc, nc))
        dsigma = dd2k
        core = model.d_out * 0.5 * (kern.cross_hessian(x, x)
                                    + kern.cross_hessian(x, x).T)
        dcore = model.d_out * dsigma
    else:
        alpha = model.cache["alpha"]                     # (N, D_y)
        dk = model._grad_first(x)                        # (nc, N)
        a_tens = model._xx_hessian_first(x)              # (N, nc, nc)
        s = cho_solve(model.cache["chol"], dk.T).T       # (nc, N)
        mu = (dk @ alpha).T                              # (D_y, nc)
        sigma = kern.cross_hessian(x, x) - dk @ cho_solve(model.cache["chol"],
                                                          dk.T)
        sigma = 0.5 * (sigma + sigma.T)
        dmu = np.einsum("nik,nd->dik", a_tens, alpha)    # (D_y, nc, nc)
        dsigma = (dd2k
                  - np.einsum("nik,jn->ijk", a_tens, s)
                  - np.einsum("in,njk->ijk", s, a_tens))
        core = mu.T @ mu + model.d_out * sigma
        dcore = (np.einsum("dik,dj->ijk", dmu, mu)
                 + np.einsum("di,djk->ijk", mu, dmu)
                 + model.d_out * dsigma)

    if model.manifold == "euclidean":
        return dcore

    p = lorentz.projector_matrix(x)
    eye = np.eye(nc)
    # dP[i, a, k] = delta_ik x_a + x_i delta_ak
    dp = (np.einsum("ik,a->iak", eye, x) + np.einsum("i,ak->iak", x, eye))
    dg = (np.einsum("iak,ab,jb->ijk", dp, core, p)
          + np.einsum("ia,abk,jb->ijk", p, dcore, p)
          + np.einsum("ia,ab,jbk->ijk", p, core, dp))
    return dg


def metric_with_derivative(model: LatentModel, x) -> MetricEval:
    me = expected_metric(model, x)
    me.dG = metric_derivative(model, x)
    return me
