import numpy as np
import pytest

from hypepull import geodesic as geo
from hypepull import lorentz
from hypepull.errors import ConfigError
from hypepull.geodesic import (DiscreteCurve, GeodesicConfig, base_geodesic,
                               curve_energy, curve_loss, decode_curve,
                               energy_gradient, optimize_geodesic,
                               spline_energy, via_origin_init)
from hypepull.gplvm import LatentModel
from hypepull.kernels import EuclSEKernel, Hyp2SEKernel, Hyp3SEKernel
from hypepull.pullback import expected_metric, expected_metric_many

from conftest import random_points
from fdtools import rel_err


def hyp2_model(rng, n=10, d_out=3, n_samples=200):
    X = random_points(rng, n, dim=2, scale=0.5)
    Y = rng.standard_normal((n, d_out))
    k = Hyp2SEKernel(tau=0.8, kappa=0.5, n_samples=n_samples, seed=31)
    return LatentModel(X, Y, k, 0.3, jitter=0.0)


def hyp3_model(rng, n=10, d_out=3):
    X = random_points(rng, n, dim=3, scale=0.5)
    Y = rng.standard_normal((n, d_out))
    return LatentModel(X, Y, Hyp3SEKernel(tau=0.8, kappa=0.6), 0.3, jitter=0.0)


def flat_model(d_out=3):
    # no-data Euclidean model: constant expected metric D_y * tau/kappa^2 * I
    k = EuclSEKernel(tau=1.0, kappa=0.8, dim=2)
    return LatentModel(np.zeros((0, 2)), np.zeros((0, d_out)), k, 0.1)


class TestBaseGeodesic:
    def test_degenerate_endpoints(self, rng):
        x = random_points(rng, 1, dim=2)[0]
        c = base_geodesic(x, x, 7)
        assert np.allclose(c.points, x[None, :])

    def test_equal_spacing(self, rng):
        x, y = random_points(rng, 2, dim=2, scale=0.8)
        c = base_geodesic(x, y, 25)
        d = lorentz.distance(c.points[:-1], c.points[1:], validate=False)
        assert np.max(np.abs(d - d[0])) < 1e-9

    def test_additivity(self, rng):
        x, y = random_points(rng, 2, dim=2, scale=0.8)
        c = base_geodesic(x, y, 25)
        d = lorentz.distance(c.points[:-1], c.points[1:], validate=False)
        assert np.sum(d) == pytest.approx(lorentz.distance(x, y), abs=1e-8)

    def test_euclidean_lerp(self):
        c = base_geodesic(np.zeros(2), np.array([1.0, 2.0]), 5, "euclidean")
        np.testing.assert_allclose(c.points[2], [0.5, 1.0], atol=1e-15)

    def test_min_points(self, rng):
        x, y = random_points(rng, 2, dim=2)
        with pytest.raises(ConfigError):
            base_geodesic(x, y, 2)


class TestViaOrigin:
    def test_origin_endpoint_reduces_to_base(self, rng):
        mu0 = lorentz.origin(2)
        y = random_points(rng, 1, dim=2, scale=0.8)[0]
        c1 = via_origin_init(mu0, y, 25)
        c2 = base_geodesic(mu0, y, 25)
        np.testing.assert_allclose(c1.points, c2.points, atol=1e-12)

    def test_midpoint_is_origin(self, rng):
        x, y = random_points(rng, 2, dim=2, scale=0.8)
        c = via_origin_init(x, y, 25)
        np.testing.assert_allclose(c.points[12], lorentz.origin(2), atol=1e-9)

    def test_total_length(self, rng):
        x, y = random_points(rng, 2, dim=2, scale=0.8)
        mu0 = lorentz.origin(2)
        c = via_origin_init(x, y, 25)
        d = lorentz.distance(c.points[:-1], c.points[1:], validate=False)
        want = lorentz.distance(x, mu0) + lorentz.distance(mu0, y)
        assert np.sum(d) == pytest.approx(want, abs=1e-8)


class TestCurveEnergy:
    def test_degenerate_curve_zero(self, rng):
        m = hyp2_model(rng)
        x = random_points(rng, 1, dim=2)[0]
        c = DiscreteCurve(np.tile(x, (5, 1)))
        total, seg = curve_energy(c, m)
        assert total == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_segments_on_flat_metric(self):
        m = flat_model()
        pts = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
        c = DiscreteCurve(pts, "euclidean")
        _, seg = curve_energy(c, m)
        assert seg[0] == pytest.approx(seg[1], rel=1e-12)

    def test_matches_dense_loop(self, rng):
        m = hyp3_model(rng)
        pts = random_points(rng, 6, dim=3, scale=0.5)
        c = DiscreteCurve(pts)
        total, seg = curve_energy(c, m)
        want = 0.0
        for i in range(5):
            v = lorentz.logmap(pts[i], pts[i + 1])
            g = expected_metric(m, pts[i]).G
            want += v @ g @ v
        assert total == pytest.approx(want, abs=1e-10)


class TestSplineEnergy:
    def test_zero_on_base_geodesic(self, rng):
        x, y = random_points(rng, 2, dim=2, scale=0.8)
        c = base_geodesic(x, y, 9)
        assert spline_energy(c) < 1e-12

    def test_quadratic_growth(self, rng):
        x, y = random_points(rng, 2, dim=2, scale=0.8)
        vals = []
        for eps in [1e-3, 2e-3, 4e-3]:
            c = base_geodesic(x, y, 9)
            t = lorentz.project_to_tangent(c.points[4],
                                           np.array([0.0, 1.0, 0.5]))
            t = eps * t / lorentz.tangent_norm(t)
            pts = c.points.copy()
            pts[4] = lorentz.expmap(pts[4], t)
            vals.append(spline_energy(DiscreteCurve(pts)))
        ratios = np.array(vals[1:]) / np.array(vals[:-1])
        np.testing.assert_allclose(ratios, 4.0, rtol=0.05)

    def test_three_point_off_midpoint(self, rng):
        a, b = random_points(rng, 2, dim=2, scale=0.6)
        x1 = random_points(rng, 1, dim=2, scale=0.6)[0]
        c = DiscreteCurve(np.stack([a, x1, b]))
        mid = lorentz.expmap(a, 0.5 * lorentz.logmap(a, b))
        assert spline_energy(c) == pytest.approx(
            lorentz.distance(x1, mid) ** 2, rel=1e-10)


class TestEnergyGradient:
    def test_endpoints_zero(self, rng):
        m = hyp2_model(rng)
        x, y = random_points(rng, 2, dim=2, scale=0.6)
        c = base_geodesic(x, y, 7)
        g = energy_gradient(c, m, "fd_local", lam=1.0)
        assert np.all(g[0] == 0.0) and np.all(g[-1] == 0.0)

    def test_fd_local_equals_full_fd(self, rng):
        # identical by term locality, up to cancellation round-off
        m = hyp3_model(rng, n=6)
        x, y = random_points(rng, 2, dim=3, scale=0.6)
        c = base_geodesic(x, y, 6)
        lam, h = 0.7, 1e-5
        g_local = energy_gradient(c, m, "fd_local", lam=lam, fd_step=h)
        g_full = np.zeros_like(c.points)
        for i in range(1, 5):
            frame = geo._tangent_basis(c.points[i])
            for t in frame:
                pp, pm = c.points.copy(), c.points.copy()
                pp[i] = geo._exp("hyperbolic", c.points[i], h * t)
                pm[i] = geo._exp("hyperbolic", c.points[i], -h * t)
                lp = curve_loss(DiscreteCurve(pp), m, lam)
                lm = curve_loss(DiscreteCurve(pm), m, lam)
                g_full[i] += (lp - lm) / (2 * h) * t
        assert np.max(np.abs(g_local - g_full)) < 1e-10 * max(
            1.0, np.max(np.abs(g_full)))

    @pytest.mark.parametrize("maker", [hyp3_model, hyp2_model])
    def test_analytic_matches_fd_local(self, rng, maker):
        m = maker(rng, n=8)
        dim = m.kernel.dim
        for _ in range(5):
            x, y = random_points(rng, 2, dim=dim, scale=0.6)
            c = base_geodesic(x, y, 6)
            g_fd = energy_gradient(c, m, "fd_local", lam=1.0)
            g_an = energy_gradient(c, m, "analytic", lam=1.0)
            assert rel_err(g_fd, g_an) < 1e-3

    def test_analytic_matches_fd_local_euclidean(self, rng):
        X = rng.standard_normal((8, 2)) * 0.5
        Y = rng.standard_normal((8, 3))
        m = LatentModel(X, Y, EuclSEKernel(tau=0.9, kappa=0.7, dim=2), 0.2,
                        jitter=0.0)
        c = base_geodesic(rng.standard_normal(2), rng.standard_normal(2), 6,
                          "euclidean")
        g_fd = energy_gradient(c, m, "fd_local", lam=1.0)
        g_an = energy_gradient(c, m, "analytic", lam=1.0)
        assert rel_err(g_fd, g_an) < 1e-3

    def test_unknown_mode_rejected(self, rng):
        m = hyp2_model(rng)
        c = base_geodesic(*random_points(rng, 2, dim=2, scale=0.5), 5)
        with pytest.raises(ConfigError):
            energy_gradient(c, m, "autodiff")


class TestOptimize:
    def test_flat_metric_stationarity(self):
        # a straight equally spaced line is already optimal under a constant
        # metric; 200 steps must not change the loss beyond 1e-6
        m = flat_model()
        c = base_geodesic(np.array([-1.0, 0.2]), np.array([1.0, -0.4]), 9,
                          "euclidean")
        loss0 = curve_loss(c, m, lam=1.0)
        out, trace = optimize_geodesic(
            c, m, GeodesicConfig(steps=200, lr=0.005, lam=1.0))
        assert abs(curve_loss(out, m, lam=1.0) - loss0) < 1e-6

    def test_energy_decreases_and_points_stay_on_manifold(self, rng):
        m = hyp2_model(rng, n=12)
        ends = random_points(rng, 2, dim=2, scale=0.9)
        c = base_geodesic(ends[0], ends[1], 9)
        cfg = GeodesicConfig(steps=60, lr=0.01, lam=1.0)
        out, trace = optimize_geodesic(c, m, cfg)
        assert trace[-1] <= trace[0] + 1e-12
        assert min(trace) == curve_loss(out, m, lam=1.0)
        defect = np.abs(lorentz.manifold_defect(out.points))
        assert np.max(defect) < 1e-6 * (1 + np.max(np.sum(out.points**2, -1)))
        np.testing.assert_array_equal(out.points[0], c.points[0])
        np.testing.assert_array_equal(out.points[-1], c.points[-1])

    def test_deterministic(self, rng):
        m = hyp3_model(rng, n=8)
        ends = random_points(rng, 2, dim=3, scale=0.7)
        c = base_geodesic(ends[0], ends[1], 7)
        cfg = GeodesicConfig(steps=20, lr=0.01, lam=1.0)
        out1, tr1 = optimize_geodesic(c, m, cfg)
        out2, tr2 = optimize_geodesic(c, m, cfg)
        np.testing.assert_array_equal(out1.points, out2.points)
        assert tr1 == tr2

    def test_spline_regularizer_binds(self, rng):
        m = hyp2_model(rng, n=12)
        ends = random_points(rng, 2, dim=2, scale=0.8)
        c = base_geodesic(ends[0], ends[1], 9)
        out, _ = optimize_geodesic(c, m,
                                   GeodesicConfig(steps=80, lr=0.01, lam=1.0))
        jit = out.points.copy()
        rng2 = np.random.default_rng(5)
        for i in range(1, len(jit) - 1):
            t = lorentz.project_to_tangent(jit[i],
                                           0.05 * rng2.standard_normal(3))
            jit[i] = lorentz.renormalize(lorentz.expmap(jit[i], t,
                                                        validate=False))
        assert spline_energy(out) <= spline_energy(DiscreteCurve(jit))


class TestDecode:
    def test_training_curve_low_variance(self, rng):
        m = hyp2_model(rng, n=6)
        m.noise_var = 1e-8
        m._cache = None
        c = DiscreteCurve(m.X[:3], "hyperbolic")
        _, vars_, mean_unc = decode_curve(c, m)
        assert np.max(vars_) < 1e-6

    def test_far_curve_reverts_to_prior(self, rng):
        m = hyp3_model(rng, n=6)
        mu0 = lorentz.origin(3)
        far = [lorentz.expmap(mu0, np.array([0.0, t, 0.0, 0.0]))
               for t in (8.0, 9.0, 10.0)]
        c = DiscreteCurve(np.stack(far), "hyperbolic")
        _, vars_, _ = decode_curve(c, m)
        np.testing.assert_allclose(vars_, m.kernel.tau, rtol=1e-6)

    def test_matches_pointwise_loop(self, rng):
        m = hyp2_model(rng, n=8)
        pts = random_points(rng, 5, dim=2, scale=0.5)
        c = DiscreteCurve(pts)
        means, vars_, mean_unc = decode_curve(c, m)
        for i, x in enumerate(pts):
            mean_i, var_i = m.posterior_predict(x)
            np.testing.assert_allclose(means[i], mean_i + m.obs_mean,
                                       atol=1e-12)
            assert vars_[i] == pytest.approx(var_i, abs=1e-12)
        assert mean_unc == pytest.approx(np.mean(vars_), abs=1e-15)
