import math

import numpy as np
import pytest

from capdmp import (
    AnisotropicGaussianTarget,
    BananaTarget,
    ZeroGradientError,
    bps_rate,
    build_metric,
    christoffel_symbols,
    flip_scalar_from_coefficients,
    flip_scalar_from_directional,
    make_flow_coefficients,
    metric_partials_from_hessian,
    rate_pack,
    reflect,
    refresh_velocity,
)
from capdmp.softabs import directional_metric_derivative
from conftest import banana_cloud


def banana_setup(x, hardness=1e3):
    target = BananaTarget()
    metric = build_metric(target.hessian(x), hardness, x=x)
    parts = metric_partials_from_hessian(
        metric, [target.hessian_partial(x, k) for k in range(2)])
    derivs = christoffel_symbols(metric, parts)
    return target, metric, parts, derivs


class TestBpsRate:
    def test_moving_uphill_is_silent(self):
        assert bps_rate(np.array([1.0, 0.0]), np.array([2.0, 1.0])) == 0.0

    def test_standard_gaussian_unit_rate(self):
        t = AnisotropicGaussianTarget(d=2, delta=1.0)
        grad = t.gradient(np.array([1.0, 0.0]))
        assert bps_rate(grad, np.array([1.0, 0.0])) == pytest.approx(1.0)

    def test_positive_part_identity(self, rng):
        for _ in range(100):
            g, v = rng.normal(size=3), rng.normal(size=3)
            assert bps_rate(g, v) + bps_rate(g, -v) == pytest.approx(
                abs(np.dot(v, g)), rel=1e-12)


class TestFlipScalar:
    def test_gaussian_sl_reduces_to_velocity_gradient(self, rng):
        t = AnisotropicGaussianTarget(d=3, delta=7.0)
        x, v = rng.normal(size=3), rng.normal(size=3)
        metric = build_metric(t.hessian(x), 1e3)
        zero = np.zeros((3, 3))
        grad = t.gradient(x)
        s_sl = flip_scalar_from_directional(metric, zero, grad, v, "sl")
        s_ca = flip_scalar_from_directional(metric, zero, grad, v, "ca")
        assert s_sl == pytest.approx(float(np.dot(v, grad)), rel=1e-12)
        assert s_ca == 0.0

    def test_zero_velocity(self, rng):
        _, metric, parts, _ = banana_setup(banana_cloud(rng, 1)[0])
        grad = BananaTarget().gradient(metric.x)
        dG_v = directional_metric_derivative(parts, np.zeros(2))
        for mode in ("sl", "ca"):
            assert flip_scalar_from_directional(metric, dG_v, grad,
                                                np.zeros(2), mode) == 0.0

    def test_fixed_v_equals_fixed_x(self, rng):
        # acceptance-grade cross-formula agreement, 100 random states
        for x in banana_cloud(rng, 100):
            target, metric, parts, derivs = banana_setup(x)
            v = metric.sample_factor @ rng.standard_normal(2)
            grad = target.gradient(x)
            dG_v = directional_metric_derivative(parts, v)
            for mode in ("sl", "ca"):
                s_v = flip_scalar_from_directional(metric, dG_v, grad, v, mode)
                coeffs = make_flow_coefficients(metric, derivs, grad, mode)
                s_x = flip_scalar_from_coefficients(coeffs, v)
                assert abs(s_v - s_x) <= 1e-9 * max(1.0, abs(s_v))

    def test_fixed_x_zero_velocity(self, rng):
        target, metric, parts, derivs = banana_setup(banana_cloud(rng, 1)[0])
        coeffs = make_flow_coefficients(metric, derivs, target.gradient(metric.x), "ca")
        assert flip_scalar_from_coefficients(coeffs, np.zeros(2)) == 0.0

    def test_matches_fd_divergence_of_weighted_field(self, rng):
        # -(1/mu) div_v(Phi_v mu) by central differences in v, where the
        # v-part of mu is exp(-v^T G v / 2)
        from capdmp import velocity_field
        checked = 0
        for x in banana_cloud(rng, 25):
            target, metric, parts, derivs = banana_setup(x)
            v = metric.sample_factor @ rng.standard_normal(2)
            grad = target.gradient(x)
            for mode in ("sl", "ca"):
                coeffs = make_flow_coefficients(metric, derivs, grad, mode)

                def weighted(w):
                    return (velocity_field(coeffs, w)
                            * math.exp(-0.5 * float(w @ metric.G @ w)))

                h = 1e-7
                div = 0.0
                for i in range(2):
                    wp, wm = v.copy(), v.copy()
                    wp[i] += h
                    wm[i] -= h
                    div += (weighted(wp)[i] - weighted(wm)[i]) / (2 * h)
                fd_val = -div * math.exp(0.5 * float(v @ metric.G @ v))
                dG_v = directional_metric_derivative(parts, v)
                s = flip_scalar_from_directional(metric, dG_v, grad, v, mode)
                if abs(fd_val) > 1e-3:
                    assert s == pytest.approx(fd_val, rel=1e-5, abs=1e-5)
                    checked += 1
        assert checked >= 25

    def test_decomposition_exact(self, rng):
        # switch_sl = switch_ca + v . grad log pi, everywhere tested
        for x in banana_cloud(rng, 100):
            target, metric, parts, _ = banana_setup(x)
            v = metric.sample_factor @ rng.standard_normal(2)
            pack = rate_pack(metric, directional_metric_derivative(parts, v),
                             target.gradient(x), v)
            lhs = pack.switch_sl
            rhs = pack.switch_ca + pack.v_dot_grad
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_rate_pair_identity(self, rng):
        for x in banana_cloud(rng, 20):
            target, metric, parts, _ = banana_setup(x)
            v = metric.sample_factor @ rng.standard_normal(2)
            pack = rate_pack(metric, directional_metric_derivative(parts, v),
                             target.gradient(x), v)
            s = pack.switch_sl
            assert max(s, 0.0) - max(-s, 0.0) == pytest.approx(s, rel=1e-15)


class TestReflection:
    def test_euclidean_hand_example(self):
        metric = build_metric(np.zeros((2, 2)), 1.0)  # G = I
        out = reflect(np.array([1.0, 0.0]), np.array([1.0, 1.0]), metric)
        assert np.allclose(out, [0.0, -1.0], atol=1e-12)

    def test_tangential_velocity_unchanged(self, rng):
        _, metric, _, _ = banana_setup(banana_cloud(rng, 1)[0])
        g = np.array([1.0, 2.0])
        # construct v with v . g = 0
        v = np.array([-2.0, 1.0])
        assert np.allclose(reflect(v, g, metric), v, atol=1e-12)

    @pytest.mark.parametrize("target_kind", ["banana", "gaussian"])
    def test_postconditions_thousand_draws(self, target_kind, rng):
        if target_kind == "banana":
            target = BananaTarget()
        else:
            target = AnisotropicGaussianTarget(d=2, delta=40.0)
        count = 0
        while count < 1000:
            if target_kind == "banana":
                x = banana_cloud(rng, 1)[0]
            else:
                x = rng.normal(size=2) * np.array([1.0, 40.0 ** -0.5])
            g = target.gradient(x)
            if np.linalg.norm(g) < 1e-8:
                continue
            metric = build_metric(target.hessian(x), 1e3)
            v = metric.sample_factor @ rng.standard_normal(2)
            fv = reflect(v, g, metric)
            count += 1
            vg = float(np.dot(v, g))
            # (a) flips the gradient projection
            assert float(np.dot(fv, g)) == pytest.approx(-vg, abs=1e-10 * max(1.0, abs(vg)))
            # (b) involution
            assert np.abs(reflect(fv, g, metric) - v).max() <= 1e-10 * max(1.0, np.abs(v).max())
            # (c) preserves the metric norm
            q0 = float(v @ metric.G @ v)
            q1 = float(fv @ metric.G @ fv)
            assert abs(q1 - q0) <= 1e-10 * max(1.0, q0)
            # (d) unit Jacobian (linear involution)
            u = metric.G_inv @ g
            M = np.eye(2) - 2.0 * np.outer(u, g) / float(g @ u)
            assert abs(abs(np.linalg.det(M)) - 1.0) <= 1e-10

    def test_bounce_rate_flip_identity(self, rng):
        # rate(F(v)) - rate(v) = v . grad log pi, exactly
        target = BananaTarget()
        for x in banana_cloud(rng, 100):
            g = target.gradient(x)
            if np.linalg.norm(g) < 1e-8:
                continue
            metric = build_metric(target.hessian(x), 1e3)
            v = metric.sample_factor @ rng.standard_normal(2)
            diff = bps_rate(g, reflect(v, g, metric)) - bps_rate(g, v)
            vg = float(np.dot(v, g))
            assert diff == pytest.approx(vg, abs=1e-10 * max(1.0, abs(vg)))

    def test_zero_gradient_raises(self):
        metric = build_metric(np.zeros((2, 2)), 1.0)
        with pytest.raises(ZeroGradientError):
            reflect(np.array([1.0, 0.0]), np.zeros(2), metric)


class TestRefreshVelocity:
    def test_identity_metric_statistics(self, rng):
        metric = build_metric(np.zeros((2, 2)), 1.0)  # G = I
        draws = np.array([refresh_velocity(metric, rng) for _ in range(100000)])
        assert np.abs(draws.mean(axis=0)).max() < 0.02

    def test_diagonal_metric_variance(self, rng):
        metric = build_metric(np.diag([-1.0, -100.0]), 1e4)  # G = diag(1, 100)
        draws = np.array([refresh_velocity(metric, rng) for _ in range(100000)])
        assert draws[:, 1].var() == pytest.approx(0.01, rel=0.10)

    def test_banana_metric_covariance(self, rng):
        _, metric, _, _ = banana_setup(np.array([0.3, 0.2]))
        draws = np.array([refresh_velocity(metric, rng) for _ in range(100000)])
        emp = np.cov(draws.T)
        rel = np.linalg.norm(emp - metric.G_inv) / np.linalg.norm(metric.G_inv)
        assert rel < 0.03
