"""Cross-module oracle checks behind the `validate` subcommand.

Each check re-derives a quantity through an independent route (finite
differences, brute-force contraction, Monte Carlo, analytic law) and
compares.  `divergence_sign` is a mutation hook: passing -1 flips the sign
convention of the velocity divergence so the suite can demonstrate that the
volume-factor oracles catch the mistake.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bench import ks_distance
from .flows import (
    MODE_CA,
    MODE_SL,
    integrate_velocity_flow,
    make_flow_coefficients,
    position_flow,
    velocity_divergence,
    velocity_field,
)
from .metro import PdmpState, Phase, SamplerModel, acceptance_log_ratio, path_log_density, propose_path
from .rates import bps_rate, flip_scalar_from_coefficients, flip_scalar_from_directional, reflect
from .samplers import Budget, _BounceClock, collect_samples, run_ca_bps
from .softabs import build_metric, christoffel_symbols, metric_partials_from_hessian
from .targets import AnisotropicGaussianTarget, BananaTarget, fd_partial


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def banana_points(rng: np.random.Generator, n: int) -> np.ndarray:
    """Points in the banana's typical set (valley plus mild scatter)."""
    x1 = rng.normal(1.0, 1.2, size=n)
    x2 = x1 ** 2 + rng.normal(0.0, 0.01, size=n)
    return np.column_stack([x1, x2])


def _banana_context(x, hardness=1e3):
    target = BananaTarget()
    metric = build_metric(target.hessian(x), hardness, x=x)
    partials = metric_partials_from_hessian(
        metric, [target.hessian_partial(x, k) for k in range(2)])
    derivs = christoffel_symbols(metric, partials)
    return target, metric, partials, derivs


def check_target_derivatives(rng, n_points=20, tol_grad=1e-5, tol_hess=1e-4,
                             tol_third=1e-3) -> CheckResult:
    targets = [BananaTarget(), AnisotropicGaussianTarget(d=4, delta=50.0)]
    worst = 0.0
    for target in targets:
        for _ in range(n_points):
            if target.name == "banana":
                x = banana_points(rng, 1)[0]
            else:
                x = rng.normal(size=target.d)
            g_fd = np.array([fd_partial(target.log_density, x, i)
                             for i in range(target.d)])
            g = target.gradient(x)
            err = np.abs(g - g_fd).max() / max(1.0, np.abs(g).max())
            worst = max(worst, err / tol_grad)
            H_fd = np.stack([fd_partial(target.gradient, x, i)
                             for i in range(target.d)], axis=-1)
            H = target.hessian(x)
            err = np.abs(H - H_fd).max() / max(1.0, np.abs(H).max())
            worst = max(worst, err / tol_hess)
            for i in range(target.d):
                dH_fd = fd_partial(target.hessian, x, i)
                dH = target.hessian_partial(x, i)
                err = np.abs(dH - dH_fd).max() / max(1.0, np.abs(dH).max())
                worst = max(worst, err / tol_third)
    return CheckResult("target-derivative-oracles", worst <= 1.0,
                       f"worst error {worst:.3g}x tolerance")


def check_metric_partials(rng, n_points=5, tol=1e-4) -> CheckResult:
    target = BananaTarget()
    worst = 0.0
    for x in banana_points(rng, n_points):
        metric = build_metric(target.hessian(x), 1e3)
        partials = metric_partials_from_hessian(
            metric, [target.hessian_partial(x, k) for k in range(2)])
        for i in range(2):
            fd = fd_partial(lambda y: build_metric(target.hessian(y), 1e3).G, x, i)
            rel = np.abs(partials[i] - fd).max() / max(np.abs(partials[i]).max(), 1e-12)
            worst = max(worst, rel)
    return CheckResult("metric-partial-fd", worst <= tol,
                       f"max relative error {worst:.3g} (tol {tol:g})")


def check_christoffel_contraction(rng, n_points=20, tol=1e-9) -> CheckResult:
    worst = 0.0
    for x in banana_points(rng, n_points):
        _, _, _, derivs = _banana_context(x)
        err = np.abs(derivs.trace_gamma - derivs.grad_half_logdet).max()
        scale = max(1.0, np.abs(derivs.grad_half_logdet).max())
        worst = max(worst, err / scale)
    return CheckResult("christoffel-trace-identity", worst <= tol,
                       f"max |tr(Gamma) - grad half-logdet| {worst:.3g}")


def check_velocity_divergence(rng, n_points=20, tol=1e-6,
                              divergence_sign=1.0) -> CheckResult:
    worst = 0.0
    for x in banana_points(rng, n_points):
        _, metric, _, derivs = _banana_context(x)
        target = BananaTarget()
        coeffs = make_flow_coefficients(metric, derivs, target.gradient(x),
                                        MODE_SL, divergence_sign=divergence_sign)
        v = metric.sample_factor @ rng.standard_normal(2)
        div = velocity_divergence(coeffs, v)
        h = 1e-6
        fd = 0.0
        for i in range(2):
            vp = v.copy(); vp[i] += h
            vm = v.copy(); vm[i] -= h
            fd += (velocity_field(coeffs, vp)[i] - velocity_field(coeffs, vm)[i]) / (2 * h)
        scale = max(1.0, abs(fd))
        worst = max(worst, abs(div - fd) / scale)
    return CheckResult("divergence-fd", worst <= tol,
                       f"max |analytic - fd| {worst:.3g} (tol {tol:g})")


def check_reflection(rng, n_draws=200, tol=1e-10) -> CheckResult:
    target = BananaTarget()
    worst = 0.0
    for _ in range(n_draws):
        x = banana_points(rng, 1)[0]
        metric = build_metric(target.hessian(x), 1e3)
        g = target.gradient(x)
        if np.linalg.norm(g) < 1e-8:
            continue
        v = metric.sample_factor @ rng.standard_normal(2)
        fv = reflect(v, g, metric)
        worst = max(worst, abs(np.dot(fv, g) + np.dot(v, g)))
        worst = max(worst, np.abs(reflect(fv, g, metric) - v).max())
        worst = max(worst, abs(fv @ metric.G @ fv - v @ metric.G @ v)
                    / max(1.0, abs(v @ metric.G @ v)))
    return CheckResult("reflection-invariants", worst <= tol,
                       f"worst violation {worst:.3g} (tol {tol:g})")


def check_rate_equivalence(rng, n_points=50, tol=1e-9) -> CheckResult:
    target = BananaTarget()
    worst = 0.0
    for x in banana_points(rng, n_points):
        _, metric, partials, derivs = _banana_context(x)
        v = metric.sample_factor @ rng.standard_normal(2)
        grad = target.gradient(x)
        dG_v = np.einsum("k,kij->ij", v, partials)
        for mode in (MODE_SL, MODE_CA):
            s_v = flip_scalar_from_directional(metric, dG_v, grad, v, mode)
            coeffs = make_flow_coefficients(metric, derivs, grad, mode)
            s_x = flip_scalar_from_coefficients(coeffs, v)
            worst = max(worst, abs(s_v - s_x) / max(1.0, abs(s_v)))
        s_sl = flip_scalar_from_directional(metric, dG_v, grad, v, MODE_SL)
        s_ca = flip_scalar_from_directional(metric, dG_v, grad, v, MODE_CA)
        worst = max(worst, abs(s_sl - (s_ca + np.dot(v, grad))) / max(1.0, abs(s_sl)))
    return CheckResult("rate-equivalence", worst <= tol,
                       f"worst relative gap {worst:.3g} (tol {tol:g})")


def _fd_flow_jacobian(coeffs, v0, duration, steps_per_unit=400):
    d = v0.shape[0]
    J = np.zeros((d, d))
    h = 1e-6
    for j in range(d):
        vp = v0.copy(); vp[j] += h
        vm = v0.copy(); vm[j] -= h
        sp = integrate_velocity_flow(coeffs, vp, threshold=1e300,
                                     t_max=duration, rate=lambda w: (0.0, 0.0),
                                     steps_per_unit=steps_per_unit)
        sm = integrate_velocity_flow(coeffs, vm, threshold=1e300,
                                     t_max=duration, rate=lambda w: (0.0, 0.0),
                                     steps_per_unit=steps_per_unit)
        J[:, j] = (sp.v_end - sm.v_end) / (2 * h)
    return J


def check_volume_factor(rng, n_segments=5, tol=1e-4, roundtrip_tol=1e-6,
                        divergence_sign=1.0) -> CheckResult:
    target = BananaTarget()
    worst_jac = 0.0
    worst_rt = 0.0
    for x in banana_points(rng, n_segments):
        _, metric, _, derivs = _banana_context(x)
        coeffs = make_flow_coefficients(metric, derivs, target.gradient(x),
                                        MODE_SL, divergence_sign=divergence_sign)
        v0 = metric.sample_factor @ rng.standard_normal(2)
        duration = 0.1
        seg = integrate_velocity_flow(coeffs, v0, threshold=1e300,
                                      t_max=duration, rate=lambda w: (0.0, 0.0),
                                      steps_per_unit=400)
        J = _fd_flow_jacobian(coeffs, v0, duration)
        log_det = math.log(abs(np.linalg.det(J)))
        worst_jac = max(worst_jac, abs(seg.integral_divergence - log_det)
                        / max(abs(log_det), 1e-3))
        rev = integrate_velocity_flow(coeffs, seg.v_end, threshold=1e300,
                                      t_max=duration, rate=lambda w: (0.0, 0.0),
                                      steps_per_unit=400, field_sign=-1.0)
        worst_rt = max(worst_rt,
                       abs(seg.integral_divergence + rev.integral_divergence))
    ok = worst_jac <= tol and worst_rt <= roundtrip_tol
    return CheckResult("psi-jacobian", ok,
                       f"jacobian rel err {worst_jac:.3g} (tol {tol:g}), "
                       f"round trip {worst_rt:.3g} (tol {roundtrip_tol:g})")


def check_path_round_trip(rng, n_windows=20, tol=1e-8) -> CheckResult:
    target = BananaTarget()
    worst = 0.0
    for mode in (MODE_SL, MODE_CA):
        model = SamplerModel(target, mode)
        for _ in range(n_windows):
            x = banana_points(rng, 1)[0]
            ctx = model.point_context(x)
            v = ctx.refresh(rng)
            z0 = PdmpState(x, v, Phase.POSITION)
            skel, acct = propose_path(model, z0, 0.05, 0.01, 1, rng)
            if not acct.complete:
                continue
            fwd = path_log_density(skel, acct, "forward")
            rev = path_log_density(skel, acct, "reverse")
            mu0 = ctx.log_mu(v)
            muT = model.point_context(skel.z_end.x).log_mu(skel.z_end.v)
            r1 = acceptance_log_ratio(fwd, rev, mu0, muT, acct.log_psi, 1)
            r2 = acceptance_log_ratio(rev, fwd, muT, mu0, -acct.log_psi, -1)
            if math.isfinite(r1) and math.isfinite(r2):
                worst = max(worst, abs(r1 + r2))
    return CheckResult("path-round-trip", worst <= tol,
                       f"max |log r + log r'| {worst:.3g} (tol {tol:g})")


def check_gaussian_stationarity(rng, windows=4000) -> CheckResult:
    target = AnisotropicGaussianTarget(d=2, delta=1.0)
    chain = run_ca_bps(target, Budget(windows=windows), rng,
                       window_T=0.7, grid_step=0.35)
    xs = collect_samples(chain, 0.1)
    mean = xs.mean(axis=0)
    var = xs.var(axis=0)
    ks = ks_distance(xs[:, 0], target.marginal_cdf_first)
    ok = (np.abs(mean).max() < 0.1 and np.abs(var - 1.0).max() < 0.15
          and ks < 0.06)
    return CheckResult(
        "gaussian-stationarity-smoke", bool(ok),
        f"|mean| {np.abs(mean).max():.3f}, |var-1| {np.abs(var - 1).max():.3f}, KS {ks:.3f}")


def check_bps_event_law(rng, n=20000, tol=0.02) -> CheckResult:
    target = AnisotropicGaussianTarget(d=1)
    clock = _BounceClock(target, grid_step=0.1)
    times = np.array([clock.next_bounce(np.zeros(1), np.ones(1), 100.0, rng)
                      for _ in range(n)])
    ks = ks_distance(times, lambda t: 1.0 - math.exp(-0.5 * t * t))
    return CheckResult("bps-event-law", ks < tol, f"KS {ks:.4f} (tol {tol})")


def run_validation(seed=0, quick=False, divergence_sign=1.0):
    """Run the oracle suite; returns a list of CheckResult."""
    rng = np.random.default_rng(seed)
    checks = [
        check_target_derivatives(rng, n_points=5 if quick else 20),
        check_metric_partials(rng, n_points=3 if quick else 5),
        check_christoffel_contraction(rng, n_points=10 if quick else 20),
        check_velocity_divergence(rng, n_points=10 if quick else 20,
                                  divergence_sign=divergence_sign),
        check_reflection(rng, n_draws=100 if quick else 200),
        check_rate_equivalence(rng, n_points=20 if quick else 50),
        check_volume_factor(rng, n_segments=2 if quick else 5,
                            divergence_sign=divergence_sign),
        check_path_round_trip(rng, n_windows=5 if quick else 20),
    ]
    if not quick:
        checks.append(check_gaussian_stationarity(rng))
        checks.append(check_bps_event_law(rng))
    return checks
