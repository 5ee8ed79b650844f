import numpy as np
import pytest

from hypepull import lorentz, pullback
from hypepull.errors import UnsupportedOperationError
from hypepull.gplvm import LatentModel
from hypepull.kernels import EuclSEKernel, Hyp2SEKernel, Hyp3SEKernel
from hypepull.pullback import (MetricEval, expected_metric,
                               expected_metric_euclidean,
                               expected_metric_hyperbolic,
                               expected_metric_many, metric_derivative,
                               metric_volume)

from conftest import random_points
from fdtools import fd_jacobian, rel_err


def hyp3_model(rng, n=6, d_out=3, noise=0.1):
    X = random_points(rng, n, dim=3, scale=0.5)
    Y = rng.standard_normal((n, d_out))
    return LatentModel(X, Y, Hyp3SEKernel(tau=1.1, kappa=0.6), noise, jitter=0.0)


def hyp2_model(rng, n=6, d_out=3, noise=0.1, n_samples=300):
    X = random_points(rng, n, dim=2, scale=0.5)
    Y = rng.standard_normal((n, d_out))
    k = Hyp2SEKernel(tau=0.9, kappa=0.4, n_samples=n_samples, seed=21)
    return LatentModel(X, Y, k, noise, jitter=0.0)


def eucl_model(rng, n=6, d_out=3, noise=0.1):
    X = rng.standard_normal((n, 2))
    Y = rng.standard_normal((n, d_out))
    return LatentModel(X, Y, EuclSEKernel(tau=1.1, kappa=0.8, dim=2), noise,
                       jitter=0.0)


def wishart_mc_mean(model, x, n_samples, seed, project):
    """Empirical mean of J~^T J~ over Gaussian Jacobian samples."""
    mu, sigma = model.jacobian_posterior(x)
    lam, vec = np.linalg.eigh(sigma)
    root = vec @ np.diag(np.sqrt(np.maximum(lam, 0.0))) @ vec.T
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_samples, model.d_out, sigma.shape[0]))
    J = mu[None] + eps @ root.T
    if project:
        p = lorentz.projector_matrix(x)
        J = J @ p.T
    return np.einsum("sdi,sdj->ij", J, J) / n_samples


class TestExpectedMetric:
    def test_euclidean_no_data_is_prior_hessian(self, rng):
        k = EuclSEKernel(tau=1.3, kappa=0.7, dim=2)
        m = LatentModel(np.zeros((0, 2)), np.zeros((0, 4)), k, 0.1)
        x = rng.standard_normal(2)
        me = expected_metric_euclidean(m, x)
        np.testing.assert_allclose(me.G, 4 * k.cross_hessian(x, x), atol=1e-12)

    def test_hyperbolic_no_data_is_projected_prior(self, rng):
        k = Hyp3SEKernel(tau=1.0, kappa=0.5)
        m = LatentModel(np.zeros((0, 4)), np.zeros((0, 3)), k, 0.1)
        x = random_points(rng, 1, dim=3)[0]
        me = expected_metric_hyperbolic(m, x)
        p = lorentz.projector_matrix(x)
        np.testing.assert_allclose(me.G, 3 * p @ k.cross_hessian(x, x) @ p.T,
                                   atol=1e-12)

    def test_wishart_mc_oracle_euclidean(self, rng):
        m = eucl_model(rng, n=5, d_out=3)
        x = rng.standard_normal(2) * 0.5
        me = expected_metric_euclidean(m, x)
        emp = wishart_mc_mean(m, x, 100_000, seed=7, project=False)
        err = np.linalg.norm(emp - me.G) / np.linalg.norm(me.G)
        assert err < 0.02

    def test_wishart_mc_oracle_hyperbolic(self, rng):
        m = hyp3_model(rng, n=5, d_out=3)
        x = random_points(rng, 1, dim=3, scale=0.5)[0]
        me = expected_metric_hyperbolic(m, x)
        emp = wishart_mc_mean(m, x, 100_000, seed=8, project=True)
        err = np.linalg.norm(emp - me.G) / np.linalg.norm(me.G)
        assert err < 0.02

    def test_single_output_noncentral_part_rank_one(self, rng):
        m = hyp3_model(rng, n=5, d_out=1)
        x = random_points(rng, 1, dim=3, scale=0.5)[0]
        me = expected_metric_hyperbolic(m, x, with_wishart=True)
        assert me.wishart.dof == 1
        assert np.linalg.matrix_rank(me.wishart.noncentrality, tol=1e-10) <= 1

    def test_null_direction(self, rng):
        m = hyp3_model(rng, n=8, d_out=4)
        for x in random_points(rng, 20, dim=3, scale=0.6):
            me = expected_metric_hyperbolic(m, x)
            glx = lorentz.gl_apply(x)
            assert np.linalg.norm(me.G @ glx) <= 1e-8 * np.linalg.norm(me.G)

    def test_spectrum_nonnegative(self, rng):
        m = hyp2_model(rng, n=8)
        for x in random_points(rng, 20, dim=2, scale=0.6):
            me = expected_metric_hyperbolic(m, x)
            assert np.linalg.eigvalsh(me.G).min() >= -1e-9

    def test_wrong_manifold_rejected(self, rng):
        with pytest.raises(UnsupportedOperationError):
            expected_metric_euclidean(hyp3_model(rng), lorentz.origin(3))
        with pytest.raises(UnsupportedOperationError):
            expected_metric_hyperbolic(eucl_model(rng), np.zeros(2))

    def test_batch_matches_single(self, rng):
        m = hyp2_model(rng, n=6)
        Q = random_points(rng, 7, dim=2, scale=0.5)
        batch = expected_metric_many(m, Q)
        for i, x in enumerate(Q):
            np.testing.assert_allclose(batch[i], expected_metric(m, x).G,
                                       atol=1e-12)


class TestMetricVolume:
    def test_identity_euclidean(self):
        me = MetricEval(point=np.zeros(2), G=np.eye(2), manifold="euclidean")
        assert metric_volume(me) == pytest.approx(1.0)

    def test_hyperbolic_drops_null_eigenvalue(self, rng):
        # metric with eigenvalues {0, a, b} has volume sqrt(a b)
        a, b = 0.7, 2.3
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        g = q @ np.diag([0.0, a, b]) @ q.T
        me = MetricEval(point=lorentz.origin(2), G=g, manifold="hyperbolic")
        assert metric_volume(me) == pytest.approx(np.sqrt(a * b), rel=1e-10)

    def test_agrees_with_rank_d_svd(self, rng):
        m = hyp3_model(rng, n=6, d_out=3)
        x = random_points(rng, 1, dim=3, scale=0.5)[0]
        me = expected_metric_hyperbolic(m, x)
        sv = np.linalg.svd(me.G, compute_uv=False)
        pseudo = float(np.sqrt(np.prod(sv[:3])))
        assert metric_volume(me) == pytest.approx(pseudo, rel=1e-8)


def tangent_compare(dg, fd, x, manifold):
    """Contract the derivative index with the tangent projector.

    The ambient extension of coincident-input kernel evaluations is clamped
    at the manifold, so only tangent-direction derivatives are well-defined
    (and only those enter the tangent-projected energy gradient).
    """
    if manifold == "euclidean":
        return rel_err(dg, fd)
    pi = lorentz.projector_matrix(x) @ np.diag([-1.0] + [1.0] * (len(x) - 1))
    return rel_err(np.einsum("ijk,kl->ijl", dg, pi),
                   np.einsum("ijk,kl->ijl", fd, pi))


class TestMetricDerivative:
    def fd_metric(self, model, x, step=1e-5):
        if model.manifold == "hyperbolic":
            f = lambda xx: expected_metric_hyperbolic(model, xx).G
        else:
            f = lambda xx: expected_metric_euclidean(model, xx).G
        return fd_jacobian(f, x, step=step)

    def test_matches_fd_hyp3(self, rng):
        m = hyp3_model(rng, n=6, d_out=3)
        for x in random_points(rng, 5, dim=3, scale=0.5):
            dg = metric_derivative(m, x)
            fd = self.fd_metric(m, x)
            assert tangent_compare(dg, fd, x, "hyperbolic") < 1e-3

    def test_matches_fd_hyp2(self, rng):
        m = hyp2_model(rng, n=6, d_out=3, n_samples=500)
        for x in random_points(rng, 3, dim=2, scale=0.5):
            dg = metric_derivative(m, x)
            fd = self.fd_metric(m, x)
            assert tangent_compare(dg, fd, x, "hyperbolic") < 1e-3

    def test_matches_fd_euclidean(self, rng):
        m = eucl_model(rng, n=6, d_out=3)
        for _ in range(3):
            x = rng.standard_normal(2) * 0.6
            dg = metric_derivative(m, x)
            fd = self.fd_metric(m, x)
            assert rel_err(dg, fd) < 1e-3

    def test_no_data_fd_consistency(self, rng):
        k = Hyp3SEKernel(tau=1.0, kappa=0.5)
        m = LatentModel(np.zeros((0, 4)), np.zeros((0, 2)), k, 0.1)
        x = random_points(rng, 1, dim=3, scale=0.4)[0]
        dg = metric_derivative(m, x)
        fd = self.fd_metric(m, x)
        assert tangent_compare(dg, fd, x, "hyperbolic") < 1e-3

    def test_symmetric_in_metric_indices(self, rng):
        m = hyp3_model(rng, n=6)
        x = random_points(rng, 1, dim=3, scale=0.5)[0]
        dg = metric_derivative(m, x)
        np.testing.assert_allclose(dg, np.swapaxes(dg, 0, 1), atol=1e-9)
