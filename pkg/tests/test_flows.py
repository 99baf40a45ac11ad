import math

import numpy as np
import pytest

from capdmp import (
    BananaTarget,
    ProposalInvalid,
    build_metric,
    christoffel_symbols,
    integrate_velocity_flow,
    make_flow_coefficients,
    metric_partials_from_hessian,
    position_flow,
    segment_volume_log,
    velocity_divergence,
    velocity_field,
)
from capdmp.flows import (
    integrate_affine_velocity_flow,
    ramp_first_arrival,
    ramp_integral,
)
from conftest import banana_cloud


def banana_coeffs(x, mode="sl", divergence_sign=1.0, hardness=1e3):
    target = BananaTarget()
    metric = build_metric(target.hessian(x), hardness, x=x)
    parts = metric_partials_from_hessian(
        metric, [target.hessian_partial(x, k) for k in range(2)])
    derivs = christoffel_symbols(metric, parts)
    coeffs = make_flow_coefficients(metric, derivs, target.gradient(x), mode,
                                    divergence_sign=divergence_sign)
    return coeffs, metric, derivs


def typical_velocity(metric, rng):
    return metric.sample_factor @ rng.standard_normal(metric.d)


def gaussian_ca_coeffs(delta=1.0, d=2):
    from capdmp import AnisotropicGaussianTarget
    t = AnisotropicGaussianTarget(d=d, delta=delta)
    x = np.zeros(d)
    metric = build_metric(t.hessian(x), 1e3)
    derivs = christoffel_symbols(metric, np.zeros((d, d, d)))
    return make_flow_coefficients(metric, derivs, t.gradient(x), "ca")


class TestPositionFlow:
    def test_simple(self):
        assert np.allclose(position_flow([0.0, 0.0], [1.0, 2.0], 0.5), [0.5, 1.0])

    def test_zero_time_identity(self, rng):
        x, v = rng.normal(size=2), rng.normal(size=2)
        assert np.array_equal(position_flow(x, v, 0.0), x)

    def test_composition_exact(self, rng):
        x, v = rng.normal(size=3), rng.normal(size=3)
        one = position_flow(position_flow(x, v, 0.25), v, 0.5)
        assert np.allclose(one, position_flow(x, v, 0.75), atol=1e-15)


class TestVelocityField:
    def test_pure_drift(self):
        coeffs = gaussian_ca_coeffs()
        # CA drift on a constant metric is zero
        assert not velocity_field(coeffs, np.array([0.3, -0.5])).any()

    def test_constant_field_from_drift(self, rng):
        from dataclasses import replace
        coeffs = gaussian_ca_coeffs()
        b = rng.normal(size=2)
        coeffs = replace(coeffs, drift=b)
        for _ in range(5):
            v = rng.normal(size=2)
            assert np.allclose(velocity_field(coeffs, v), -b)

    def test_matches_index_loop_on_banana(self, rng):
        coeffs, metric, derivs = banana_coeffs(np.array([0.3, 0.2]))
        v = np.array([1.0, 0.0])
        expected = np.array([
            -derivs.gamma[a, 0, 0] - coeffs.drift[a] for a in range(2)])
        assert np.allclose(velocity_field(coeffs, v), expected, rtol=1e-12)


class TestVelocityDivergence:
    def test_zero_velocity(self, rng):
        coeffs, metric, _ = banana_coeffs(banana_cloud(rng, 1)[0])
        assert velocity_divergence(coeffs, np.zeros(2)) == 0.0

    def test_constant_metric_zero(self, rng):
        coeffs = gaussian_ca_coeffs()
        for _ in range(5):
            assert velocity_divergence(coeffs, rng.normal(size=2)) == 0.0

    def test_matches_fd_jacobian_trace(self, rng):
        # this oracle also arbitrates the sign convention
        for x in banana_cloud(rng, 100):
            coeffs, metric, _ = banana_coeffs(x)
            v = typical_velocity(metric, rng)
            div = velocity_divergence(coeffs, v)
            h = 1e-6
            fd = 0.0
            for i in range(2):
                vp, vm = v.copy(), v.copy()
                vp[i] += h
                vm[i] -= h
                fd += (velocity_field(coeffs, vp)[i]
                       - velocity_field(coeffs, vm)[i]) / (2 * h)
            assert div == pytest.approx(fd, abs=1e-6 * max(1.0, abs(fd)))


class TestIntegrator:
    def test_zero_rate_no_event(self):
        coeffs = gaussian_ca_coeffs()
        seg = integrate_velocity_flow(coeffs, np.array([0.4, -0.2]),
                                      threshold=1.0, t_max=2.0,
                                      rate=lambda v: (0.0, 0.0))
        assert not seg.event_triggered
        assert seg.duration == pytest.approx(2.0)
        assert np.allclose(seg.v_end, [0.4, -0.2])
        assert seg.integral_rate_forward == 0.0
        assert seg.integral_rate_reverse == 0.0
        assert seg.integral_divergence == 0.0

    def test_constant_rate_event_time(self):
        coeffs = gaussian_ca_coeffs()
        c = 0.8
        seg = integrate_velocity_flow(coeffs, np.array([0.1, 0.1]),
                                      threshold=c * 1.5, t_max=10.0,
                                      rate=lambda v: (c, 0.0))
        assert seg.event_triggered
        assert seg.duration == pytest.approx(1.5, abs=1e-9)
        assert seg.integral_rate_forward == pytest.approx(c * 1.5, rel=1e-9)

    def test_step_halving_fourth_order(self, rng):
        # the quadratic field can genuinely diverge in finite time on the
        # banana; such draws raise ProposalInvalid and are skipped here
        from capdmp.rates import flip_scalar_from_coefficients, positive_part
        checked = 0
        for x in banana_cloud(rng, 8):
            coeffs, metric, _ = banana_coeffs(x)
            v0 = typical_velocity(metric, rng)

            def rate(w):
                s = flip_scalar_from_coefficients(coeffs, w)
                return positive_part(s), positive_part(-s)

            try:
                segs = [integrate_velocity_flow(coeffs, v0, threshold=1e300,
                                                t_max=0.1, rate=rate,
                                                steps_per_unit=n)
                        for n in (400, 800, 1600)]
            except ProposalInvalid:
                continue
            checked += 1
            v_scale = max(1.0, np.abs(segs[2].v_end).max())
            err1 = np.abs(segs[0].v_end - segs[1].v_end).max() / v_scale
            err2 = np.abs(segs[1].v_end - segs[2].v_end).max() / v_scale
            assert err1 <= 1e-8
            i_scale = max(1.0, segs[2].integral_rate_forward)
            assert abs(segs[0].integral_rate_forward
                       - segs[1].integral_rate_forward) / i_scale <= 1e-8
            if err2 > 1e-15 and err1 > 1e-13:
                order = math.log2(err1 / err2)
                assert order >= 3.5
        assert checked >= 4

    def test_flow_reversibility(self, rng):
        checked = 0
        for x in banana_cloud(rng, 15):
            coeffs, metric, _ = banana_coeffs(x)
            v0 = typical_velocity(metric, rng)
            try:
                fwd = integrate_velocity_flow(coeffs, v0, threshold=1e300,
                                              t_max=0.1,
                                              rate=lambda v: (0.0, 0.0))
                back = integrate_velocity_flow(coeffs, fwd.v_end,
                                               threshold=1e300, t_max=0.1,
                                               rate=lambda v: (0.0, 0.0),
                                               field_sign=-1.0)
            except ProposalInvalid:
                continue
            checked += 1
            assert np.abs(back.v_end - v0).max() <= 1e-7 * max(1.0, np.abs(v0).max())
        assert checked >= 8

    def test_non_finite_state_raises_proposal_invalid(self):
        coeffs = gaussian_ca_coeffs()
        from dataclasses import replace
        bad = replace(coeffs, drift=np.array([np.nan, 0.0]), is_affine=False)
        with pytest.raises(ProposalInvalid):
            integrate_velocity_flow(bad, np.zeros(2), threshold=1.0,
                                    t_max=1.0, rate=lambda v: (0.0, 0.0))

    def test_precondition_errors(self):
        coeffs = gaussian_ca_coeffs()
        with pytest.raises(ValueError):
            integrate_velocity_flow(coeffs, np.zeros(2), threshold=0.0,
                                    t_max=1.0, rate=lambda v: (0.0, 0.0))
        with pytest.raises(ValueError):
            integrate_velocity_flow(coeffs, np.zeros(2), threshold=1.0,
                                    t_max=0.0, rate=lambda v: (0.0, 0.0))


class TestVolumeFactor:
    def test_constant_metric_zero(self):
        coeffs = gaussian_ca_coeffs()
        seg = integrate_velocity_flow(coeffs, np.array([1.0, 0.5]),
                                      threshold=1e300, t_max=0.5,
                                      rate=lambda v: (0.0, 0.0))
        assert segment_volume_log(seg) == 0.0

    def test_zero_duration(self, rng):
        coeffs, metric, _ = banana_coeffs(banana_cloud(rng, 1)[0])
        seg = integrate_velocity_flow(coeffs, typical_velocity(metric, rng),
                                      threshold=1e300, t_max=1e-9,
                                      rate=lambda v: (0.0, 0.0))
        assert abs(segment_volume_log(seg)) < 1e-9

    def test_matches_fd_jacobian_logdet(self, rng):
        checked = 0
        for x in banana_cloud(rng, 30):
            coeffs, metric, _ = banana_coeffs(x)
            v0 = typical_velocity(metric, rng)
            duration = 0.1
            h = 1e-6
            J = np.zeros((2, 2))
            try:
                seg = integrate_velocity_flow(coeffs, v0, threshold=1e300,
                                              t_max=duration,
                                              rate=lambda v: (0.0, 0.0),
                                              steps_per_unit=400)
                for j in range(2):
                    vp, vm = v0.copy(), v0.copy()
                    vp[j] += h
                    vm[j] -= h
                    sp = integrate_velocity_flow(coeffs, vp, threshold=1e300,
                                                 t_max=duration,
                                                 rate=lambda v: (0.0, 0.0),
                                                 steps_per_unit=400)
                    sm = integrate_velocity_flow(coeffs, vm, threshold=1e300,
                                                 t_max=duration,
                                                 rate=lambda v: (0.0, 0.0),
                                                 steps_per_unit=400)
                    J[:, j] = (sp.v_end - sm.v_end) / (2 * h)
            except ProposalInvalid:
                continue
            checked += 1
            log_det = math.log(abs(np.linalg.det(J)))
            assert segment_volume_log(seg) == pytest.approx(
                log_det, abs=1e-4 * max(1.0, abs(log_det)))
            if checked >= 20:
                break
        assert checked >= 12

    def test_forward_plus_reverse_is_zero(self, rng):
        checked = 0
        for x in banana_cloud(rng, 15):
            coeffs, metric, _ = banana_coeffs(x)
            v0 = typical_velocity(metric, rng)
            try:
                fwd = integrate_velocity_flow(coeffs, v0, threshold=1e300,
                                              t_max=0.1,
                                              rate=lambda v: (0.0, 0.0))
                rev = integrate_velocity_flow(coeffs, fwd.v_end,
                                              threshold=1e300, t_max=0.1,
                                              rate=lambda v: (0.0, 0.0),
                                              field_sign=-1.0)
            except ProposalInvalid:
                continue
            checked += 1
            assert abs(segment_volume_log(fwd) + segment_volume_log(rev)) <= 1e-6
        assert checked >= 8


class TestRampClosedForms:
    def test_integral_against_quadrature(self, rng):
        from scipy import integrate as spi
        for _ in range(50):
            c0 = rng.normal() * 2
            c1 = rng.normal() * 2
            t = rng.uniform(0.1, 3.0)
            val, _ = spi.quad(lambda s: max(c0 + c1 * s, 0.0), 0.0, t, limit=200)
            assert ramp_integral(c0, c1, t) == pytest.approx(val, abs=1e-8)

    def test_first_arrival_inverts_integral(self, rng):
        for _ in range(50):
            c0 = rng.normal() * 2
            c1 = rng.normal() * 2
            draw = rng.exponential()
            t = ramp_first_arrival(c0, c1, draw)
            if math.isfinite(t):
                assert ramp_integral(c0, c1, t) == pytest.approx(draw, rel=1e-9)
            else:
                total = ramp_integral(c0, c1, 1e9)
                assert total <= draw + 1e-6

    def test_affine_matches_rk4(self, rng):
        from capdmp.metro import SamplerModel
        from capdmp.rates import flip_scalar_from_coefficients, positive_part
        from capdmp import AnisotropicGaussianTarget
        t = AnisotropicGaussianTarget(d=3, delta=4.0)
        model = SamplerModel(t, "sl")
        ctx = model.point_context(np.array([0.4, -0.2, 0.9]))
        coeffs = ctx.flow_coefficients()
        assert coeffs.is_affine
        v0 = np.array([0.2, 0.5, -0.4])

        def rate(w):
            s = flip_scalar_from_coefficients(coeffs, w)
            return positive_part(s), positive_part(-s)

        for thr in (0.05, 0.4, 8.0):
            rk = integrate_velocity_flow(coeffs, v0, thr, 0.9, rate,
                                         steps_per_unit=800)
            af = integrate_affine_velocity_flow(coeffs, v0, thr, 0.9)
            assert rk.event_triggered == af.event_triggered
            assert rk.duration == pytest.approx(af.duration, abs=1e-8)
            assert np.abs(rk.v_end - af.v_end).max() < 1e-10
            assert rk.integral_rate_forward == pytest.approx(
                af.integral_rate_forward, abs=1e-8)
            assert rk.integral_rate_reverse == pytest.approx(
                af.integral_rate_reverse, abs=1e-8)
