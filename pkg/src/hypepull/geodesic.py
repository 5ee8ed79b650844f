"""Discretized geodesics under the expected pullback metric.

A candidate geodesic is a list of M points with fixed endpoints. Its energy
is the sum of metric quadratic forms of the segment Log vectors; a spline
term (squared distances of interior points to the geodesic midpoints of
their neighbors) regularizes the spacing. Optimization runs Riemannian Adam
over the interior points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lorentz
from .errors import ConfigError, NumericError
from .gplvm import LatentModel
from .pullback import expected_metric_many, metric_derivative


@dataclass
class DiscreteCurve:
    points: np.ndarray               # (M, ncoords)
    manifold: str = "hyperbolic"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if len(self.points) < 3:
            raise ConfigError("a discrete curve needs at least 3 points")
        if self.manifold == "hyperbolic":
            lorentz.check_point(self.points)

    def __len__(self):
        return len(self.points)

    def copy(self) -> "DiscreteCurve":
        return DiscreteCurve(self.points.copy(), self.manifold)


@dataclass
class GeodesicConfig:
    steps: int = 200
    lr: float = 0.005
    lam: float = 1.0                 # spline-energy weight
    grad_mode: str = "fd_local"      # or "analytic"
    fd_step: float = 1e-5


# -- manifold-agnostic curve primitives ---------------------------------------

def _log(manifold, x, y):
    if manifold == "hyperbolic":
        return lorentz.logmap(x, y, validate=False)
    return y - x


def _exp(manifold, x, v):
    if manifold == "hyperbolic":
        return lorentz.renormalize(lorentz.expmap(x, v, validate=False))
    return x + v


def _dist(manifold, x, y):
    if manifold == "hyperbolic":
        return lorentz.distance(x, y, validate=False)
    return float(np.linalg.norm(np.asarray(y) - np.asarray(x)))


def base_geodesic(x_a, x_b, m, manifold="hyperbolic") -> DiscreteCurve:
    """Closed-form geodesic of the latent manifold, discretized with m
    equally spaced points (straight-line interpolation for Euclidean)."""
    if m < 3:
        raise ConfigError("need at least 3 curve points")
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    ts = np.linspace(0.0, 1.0, m)
    if manifold == "hyperbolic":
        lorentz.check_point(x_a)
        lorentz.check_point(x_b)
        u = lorentz.logmap(x_a, x_b)
        pts = lorentz.renormalize(lorentz.expmap(x_a, ts[:, None] * u,
                                                 validate=False))
        pts[0], pts[-1] = x_a, x_b
    else:
        pts = x_a[None, :] + ts[:, None] * (x_b - x_a)[None, :]
    return DiscreteCurve(pts, manifold)


def via_origin_init(x_a, x_b, m, manifold="hyperbolic") -> DiscreteCurve:
    """Two concatenated geodesics through the origin, deduplicated there.

    Degenerates to the plain base geodesic when an endpoint is the origin.
    """
    if m < 3:
        raise ConfigError("need at least 3 curve points")
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    mu0 = (lorentz.origin(x_a.shape[-1] - 1) if manifold == "hyperbolic"
           else np.zeros_like(x_a))
    if _dist(manifold, x_a, mu0) < 1e-12 or _dist(manifold, x_b, mu0) < 1e-12:
        return base_geodesic(x_a, x_b, m, manifold)
    n1 = m // 2 + 1
    n2 = m - m // 2
    leg1 = base_geodesic(x_a, mu0, n1, manifold).points
    leg2 = base_geodesic(mu0, x_b, n2, manifold).points
    return DiscreteCurve(np.vstack([leg1, leg2[1:]]), manifold)


def curve_energy(curve: DiscreteCurve, model: LatentModel,
                 metrics: np.ndarray | None = None):
    """Total and per-segment pullback energy sum_i v_i^T G_{x_i} v_i."""
    pts = curve.points
    if metrics is None:
        metrics = expected_metric_many(model, pts[:-1])
    v = _log(curve.manifold, pts[:-1], pts[1:])
    seg = np.maximum(np.einsum("si,sij,sj->s", v, metrics, v), 0.0)
    return float(np.sum(seg)), seg


def _midpoint(manifold, a, b):
    if manifold == "hyperbolic":
        return lorentz.expmap(a, 0.5 * lorentz.logmap(a, b, validate=False),
                              validate=False)
    return 0.5 * (a + b)


def _spline_term(manifold, xm, x, xp):
    return _dist(manifold, x, _midpoint(manifold, xm, xp)) ** 2


def spline_energy(curve: DiscreteCurve) -> float:
    """Squared distances of interior points to their neighbors' midpoints."""
    pts = curve.points
    total = 0.0
    for i in range(1, len(pts) - 1):
        total += _spline_term(curve.manifold, pts[i - 1], pts[i], pts[i + 1])
    return float(total)


def curve_loss(curve: DiscreteCurve, model: LatentModel, lam: float,
               metrics=None) -> float:
    e, _ = curve_energy(curve, model, metrics=metrics)
    return e + lam * spline_energy(curve)


# -- gradients -----------------------------------------------------------------

def _tangent_basis(x):
    """Minkowski-orthonormal basis of the tangent space at x."""
    nc = x.shape[-1]
    basis = []
    for k in range(1, nc):
        t = np.zeros(nc)
        t[k] = 1.0
        t[0] = x[k] / x[0]          # lift keeping <t, x>_L = 0
        for b in basis:
            t = t - lorentz.minkowski_inner(t, b) * b
        t = t / lorentz.tangent_norm(t)
        basis.append(t)
    return np.stack(basis)


def _quad(g, v):
    return float(v @ g @ v)


def _local_loss(manifold, pts, i, xi, g_prev, g_i, lam):
    """Loss terms affected by replacing point i with xi.

    Curve energies of segments (i-1, i) and (i, i+1) plus the spline terms
    of interior indices i-1, i, i+1. ``g_i`` is the metric at xi.
    """
    m = len(pts)
    loss = _quad(g_prev, _log(manifold, pts[i - 1], xi))
    loss += _quad(g_i, _log(manifold, xi, pts[i + 1]))
    if lam != 0.0:
        if i - 1 >= 1:
            loss += lam * _spline_term(manifold, pts[i - 2], pts[i - 1], xi)
        loss += lam * _spline_term(manifold, pts[i - 1], xi, pts[i + 1])
        if i + 1 <= m - 2:
            loss += lam * _spline_term(manifold, xi, pts[i + 1], pts[i + 2])
    return loss


def _fd_local_gradient(curve, model, lam, fd_step, metrics):
    """Tangent-frame central differences of the locally affected loss terms."""
    pts = curve.points
    m = len(pts)
    manifold = curve.manifold
    nc = pts.shape[1]
    dim = nc - 1 if manifold == "hyperbolic" else nc
    interior = range(1, m - 1)

    if manifold == "hyperbolic":
        frames = [_tangent_basis(pts[i]) for i in interior]
        pert = np.empty((m - 2, dim, 2, nc))
        for j, i in enumerate(interior):
            for d in range(dim):
                step = fd_step * frames[j][d]
                pert[j, d, 0] = _exp(manifold, pts[i], step)
                pert[j, d, 1] = _exp(manifold, pts[i], -step)
    else:
        frames = [np.eye(nc) for _ in interior]
        pert = np.empty((m - 2, dim, 2, nc))
        for j, i in enumerate(interior):
            for d in range(dim):
                e = np.zeros(nc)
                e[d] = fd_step
                pert[j, d, 0] = pts[i] + e
                pert[j, d, 1] = pts[i] - e
    pert_metrics = expected_metric_many(model, pert.reshape(-1, nc))
    pert_metrics = pert_metrics.reshape(m - 2, dim, 2, nc, nc)

    grad = np.zeros_like(pts)
    for j, i in enumerate(interior):
        for d in range(dim):
            lp = _local_loss(manifold, pts, i, pert[j, d, 0],
                             metrics[i - 1], pert_metrics[j, d, 0], lam)
            lm = _local_loss(manifold, pts, i, pert[j, d, 1],
                             metrics[i - 1], pert_metrics[j, d, 1], lam)
            deriv = (lp - lm) / (2.0 * fd_step)
            grad[i] += deriv * frames[j][d]
    return grad


def _fd_jacobian_of(f, x, step):
    f0 = np.asarray(f(x))
    out = np.zeros(f0.shape + (x.size,))
    for c in range(x.size):
        e = np.zeros_like(x)
        e[c] = step
        out[..., c] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step)
    return out


def _analytic_gradient(curve, model, lam, fd_step, metrics):
    """Metric-derivative path analytic; Log differentials and spline terms
    by local central differences of their closed forms."""
    pts = curve.points
    m = len(pts)
    manifold = curve.manifold
    grad = np.zeros_like(pts)
    vs = _log(manifold, pts[:-1], pts[1:])
    for i in range(1, m - 1):
        amb = np.zeros(pts.shape[1])
        # energy term i: metric varies with x_i
        dg = metric_derivative(model, pts[i])
        amb += np.einsum("a,abk,b->k", vs[i], dg, vs[i])
        # energy term i: v_i = Log(x_i, x_{i+1}) varies with its base point
        dlog_base = _fd_jacobian_of(
            lambda xx: _log(manifold, xx, pts[i + 1]), pts[i].copy(), fd_step)
        amb += 2.0 * (metrics[i] @ vs[i]) @ dlog_base
        # energy term i-1: v_{i-1} = Log(x_{i-1}, x_i) varies with its target
        dlog_tgt = _fd_jacobian_of(
            lambda xx: _log(manifold, pts[i - 1], xx), pts[i].copy(), fd_step)
        amb += 2.0 * (metrics[i - 1] @ vs[i - 1]) @ dlog_tgt
        if lam != 0.0:
            def spline_part(xx, i=i):
                total = 0.0
                if i - 1 >= 1:
                    total += _spline_term(manifold, pts[i - 2], pts[i - 1], xx)
                total += _spline_term(manifold, pts[i - 1], xx, pts[i + 1])
                if i + 1 <= m - 2:
                    total += _spline_term(manifold, xx, pts[i + 1], pts[i + 2])
                return lam * total

            for c in range(pts.shape[1]):
                e = np.zeros(pts.shape[1])
                e[c] = fd_step
                amb[c] += (spline_part(pts[i] + e)
                           - spline_part(pts[i] - e)) / (2 * fd_step)
        if manifold == "hyperbolic":
            grad[i] = lorentz.project_to_tangent(pts[i], amb, validate=False)
        else:
            grad[i] = amb
    return grad


def energy_gradient(curve: DiscreteCurve, model: LatentModel,
                    grad_mode: str = "fd_local", lam: float = 1.0,
                    fd_step: float = 1e-5) -> np.ndarray:
    """Per-point tangent gradient of E + lam * E_spline; endpoints get zero."""
    if grad_mode not in ("fd_local", "analytic"):
        raise ConfigError(f"unknown grad_mode {grad_mode!r}")
    metrics = expected_metric_many(model, curve.points[:-1])
    if grad_mode == "fd_local":
        return _fd_local_gradient(curve, model, lam, fd_step, metrics)
    return _analytic_gradient(curve, model, lam, fd_step, metrics)


# -- optimization ---------------------------------------------------------------

def optimize_geodesic(init: DiscreteCurve, model: LatentModel,
                      config: GeodesicConfig):
    """Minimize the regularized curve energy over the interior points.

    Returns ``(curve, trace)`` where the curve is the best iterate by loss
    and the trace lists the loss at every iteration (including the
    initialization). Aborts on NaN loss, returning the best finite iterate.
    """
    from .optim import RiemannianAdam

    manifold = init.manifold
    pts = init.points.copy()
    opt = RiemannianAdam(lr=config.lr)
    kind = "lorentz" if manifold == "hyperbolic" else "euclidean"
    opt.register("pts", pts, kind)

    loss = curve_loss(DiscreteCurve(pts, manifold), model, config.lam)
    trace = [loss]
    best_loss, best_pts = loss, pts.copy()

    for _ in range(config.steps):
        curve = DiscreteCurve(pts, manifold)
        grad = energy_gradient(curve, model, config.grad_mode, config.lam,
                               config.fd_step)
        bad = ~np.isfinite(grad).all(axis=1)
        if np.any(bad):
            raise NumericError(
                f"non-finite gradient at curve point {int(np.argmax(bad))}")
        new_pts = opt.step({"pts": pts}, {"pts": grad})["pts"]
        new_pts[0], new_pts[-1] = pts[0], pts[-1]     # endpoints immutable
        pts = new_pts
        loss = curve_loss(DiscreteCurve(pts, manifold), model, config.lam)
        if np.isnan(loss):
            break
        trace.append(loss)
        if loss < best_loss:
            best_loss, best_pts = loss, pts.copy()
    return DiscreteCurve(best_pts, manifold), trace


def decode_curve(curve: DiscreteCurve, model: LatentModel):
    """Posterior decode of a curve: per-point means (in original observation
    coordinates), per-point variances, and the mean variance."""
    means, vars_ = model.posterior_predict(curve.points)
    return means + model.obs_mean, vars_, float(np.mean(vars_))
