"""Split deterministic flows and the velocity-flow integrator.

The position flow is linear, x_t = x_0 + v_0 t.  The velocity flow at a
frozen position x solves

    dv/dt = -eta(v) - G^{-1} grad(phi),   eta^a = gamma^a_{bc} v^b v^c,

where phi = -log pi + (1/2) log det G in SL mode and (1/2) log det G in CA
mode.  Everything position-dependent is precomputed into FlowCoefficients,
so each field evaluation is two small contractions.

The integrator is classical fixed-step RK4.  It advances the velocity while
accumulating, by the trapezoid rule on the same grid, the forward event-rate
integral, the reverse-process rate integral (the opposite-sign part at the
same states), and the divergence integral that the volume factor needs.
When the forward integral crosses the exponential threshold inside a step,
the crossing time is located by bisection and the step is re-integrated to
it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProposalInvalid
from .softabs import MetricDerivatives, MetricState

MODE_SL = "sl"
MODE_CA = "ca"

DEFAULT_STEPS_PER_UNIT = 200
DEFAULT_T_CAP = 1.0


@dataclass(frozen=True)
class FlowCoefficients:
    """Velocity-flow coefficients frozen at one position.

    `divergence_sign` is a validation hook: the shipped value +1.0 gives the
    true velocity divergence -2 tr(gamma) . v; flipping it lets the
    validation suite demonstrate that the volume-factor oracles catch a sign
    mistake.
    """

    mode: str
    gamma: np.ndarray            # Christoffel symbols (d, d, d)
    drift: np.ndarray            # G^{-1} grad(phi)
    G: np.ndarray
    G_inv: np.ndarray
    trace_gamma: np.ndarray
    grad_logpi: np.ndarray
    divergence_sign: float = 1.0
    is_affine: bool = False      # gamma == 0: flow is affine, rate linear

    @property
    def d(self) -> int:
        return self.drift.shape[0]


def make_flow_coefficients(
    metric: MetricState,
    derivs: MetricDerivatives,
    grad_logpi,
    mode: str,
    divergence_sign: float = 1.0,
) -> FlowCoefficients:
    grad_logpi = np.asarray(grad_logpi, dtype=float)
    grad_phi = derivs.grad_half_logdet.copy()
    if mode == MODE_SL:
        grad_phi -= grad_logpi
    elif mode != MODE_CA:
        raise ValueError(f"unknown flow mode '{mode}'")
    drift = metric.G_inv @ grad_phi
    return FlowCoefficients(
        mode=mode, gamma=derivs.gamma, drift=drift, G=metric.G,
        G_inv=metric.G_inv, trace_gamma=derivs.trace_gamma,
        grad_logpi=grad_logpi, divergence_sign=divergence_sign,
        is_affine=bool(not derivs.gamma.any()),
    )


def position_flow(x, v, t: float) -> np.ndarray:
    """x + v t; exact linear flow."""
    if t < 0:
        raise ValueError("position flow requires t >= 0")
    return np.asarray(x, dtype=float) + np.asarray(v, dtype=float) * t


def velocity_field(coeffs: FlowCoefficients, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    eta = (coeffs.gamma @ v) @ v
    return -eta - coeffs.drift


def velocity_divergence(coeffs: FlowCoefficients, v) -> float:
    """div_v of the velocity field: -2 tr(gamma) . v.

    The sign follows from differentiating the field itself (the quadratic
    term is -gamma v v); the finite-difference Jacobian oracle in the tests
    arbitrates it.
    """
    v = np.asarray(v, dtype=float)
    return coeffs.divergence_sign * (-2.0 * float(np.dot(coeffs.trace_gamma, v)))


@dataclass
class VelocitySegment:
    """One velocity-flow traversal with its accumulated integrals.

    integral_rate_forward / integral_rate_reverse hold the running
    trapezoid integrals of the two sign-parts reported by the rate
    evaluator; integral_divergence holds the integral of the divergence of
    the followed field (log of the segment's volume factor).
    """

    v0: np.ndarray
    duration: float
    v_end: np.ndarray
    event_triggered: bool
    integral_rate_forward: float
    integral_rate_reverse: float
    integral_divergence: float
    rate_at_end: tuple[float, float]
    checkpoints: list = field(default_factory=list)


def _rk4_step(f, v, h):
    k1 = f(v)
    k2 = f(v + 0.5 * h * k1)
    k3 = f(v + 0.5 * h * k2)
    k4 = f(v + h * k3)
    return v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_velocity_flow(
    coeffs: FlowCoefficients,
    v0,
    threshold: float,
    t_max: float,
    rate,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    t_cap: float = DEFAULT_T_CAP,
    field_sign: float = 1.0,
) -> VelocitySegment:
    """Integrate the velocity flow until the rate integral hits `threshold`.

    `rate(v)` must return the pair (forward-part, reverse-part) of the event
    rate at the current state; the forward part drives the threshold
    equation.  `field_sign=-1` follows the time-reversed flow.  Raises
    ProposalInvalid on a non-finite state.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    v = np.asarray(v0, dtype=float).copy()
    h = min(t_max, t_cap) / steps_per_unit
    n_steps = int(math.ceil(t_max / h - 1e-12))

    # hot path: bind coefficient arrays locally and inline the field;
    # overflow on a diverging trajectory is caught by the isfinite guard
    gamma_t = coeffs.gamma
    drift = coeffs.drift
    tg2 = (-2.0 * coeffs.divergence_sign * field_sign) * coeffs.trace_gamma

    def f(w):
        return field_sign * (-(gamma_t @ w) @ w - drift)

    def div(w):
        return float(tg2 @ w)

    t = 0.0
    I_fwd = 0.0
    I_rev = 0.0
    I_div = 0.0
    r_fwd, r_rev = rate(v)
    dv = div(v)
    every = max(1, n_steps // 20)
    checkpoints = [(0.0, v.copy())]

    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_steps):
            h_step = min(h, t_max - t)
            if h_step <= 0:
                break
            v_next = _rk4_step(f, v, h_step)
            if not np.all(np.isfinite(v_next)):
                raise ProposalInvalid("velocity flow produced a non-finite state")
            r_fwd_next, r_rev_next = rate(v_next)
            if not (math.isfinite(r_fwd_next) and math.isfinite(r_rev_next)):
                raise ProposalInvalid("velocity flow produced a non-finite rate")
            inc_fwd = 0.5 * h_step * (r_fwd + r_fwd_next)

            if I_fwd + inc_fwd >= threshold:
                # Crossing inside this step: bisect the partial-step length
                # on the (monotone) trapezoid-accumulated integral.
                lo, hi = 0.0, h_step
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    v_mid = _rk4_step(f, v, mid)
                    r_mid = rate(v_mid)[0]
                    if I_fwd + 0.5 * mid * (r_fwd + r_mid) >= threshold:
                        hi = mid
                    else:
                        lo = mid
                    if hi - lo <= 1e-12 * max(h_step, 1e-30):
                        break
                dt = 0.5 * (lo + hi)
                v_end = _rk4_step(f, v, dt)
                r_end = rate(v_end)
                dv_end = div(v_end)
                I_fwd += 0.5 * dt * (r_fwd + r_end[0])
                I_rev += 0.5 * dt * (r_rev + r_end[1])
                I_div += 0.5 * dt * (dv + dv_end)
                t += dt
                checkpoints.append((t, v_end.copy()))
                return VelocitySegment(
                    v0=np.asarray(v0, dtype=float), duration=t, v_end=v_end,
                    event_triggered=True, integral_rate_forward=I_fwd,
                    integral_rate_reverse=I_rev, integral_divergence=I_div,
                    rate_at_end=r_end, checkpoints=checkpoints,
                )

            dv_next = div(v_next)
            I_fwd += inc_fwd
            I_rev += 0.5 * h_step * (r_rev + r_rev_next)
            I_div += 0.5 * h_step * (dv + dv_next)
            v = v_next
            r_fwd, r_rev = r_fwd_next, r_rev_next
            dv = dv_next
            t += h_step
            if (step + 1) % every == 0:
                checkpoints.append((t, v.copy()))

    if checkpoints[-1][0] != t:
        checkpoints.append((t, v.copy()))
    return VelocitySegment(
        v0=np.asarray(v0, dtype=float), duration=t, v_end=v,
        event_triggered=False, integral_rate_forward=I_fwd,
        integral_rate_reverse=I_rev, integral_divergence=I_div,
        rate_at_end=(r_fwd, r_rev), checkpoints=checkpoints,
    )


def segment_volume_log(segment: VelocitySegment) -> float:
    """log of the segment's flow volume factor (Jacobian of v0 -> v_end)."""
    return segment.integral_divergence


# ---------------------------------------------------------------------------
# Closed forms for linear-in-time rates [c0 + c1 t]^+ (constant-metric flows
# and the BPS bounce clock on constant-Hessian targets share this algebra)


def ramp_integral(c0: float, c1: float, t: float) -> float:
    """integral of [c0 + c1 s]^+ over s in [0, t]."""
    if t <= 0.0:
        return 0.0
    if c1 == 0.0:
        return c0 * t if c0 > 0.0 else 0.0
    t_zero = -c0 / c1
    if c1 > 0.0:
        if c0 >= 0.0:
            return c0 * t + 0.5 * c1 * t * t
        if t <= t_zero:
            return 0.0
        u = t - t_zero
        return 0.5 * c1 * u * u
    # c1 < 0: positive only before t_zero (when c0 > 0)
    if c0 <= 0.0:
        return 0.0
    u = min(t, t_zero)
    return c0 * u + 0.5 * c1 * u * u


def ramp_first_arrival(c0: float, c1: float, exp_draw: float) -> float:
    """First arrival time of a Poisson process with rate [c0 + c1 t]^+.

    Returns inf when the total mass never reaches `exp_draw`.
    """
    if exp_draw <= 0.0:
        return 0.0
    if c1 == 0.0:
        return exp_draw / c0 if c0 > 0.0 else math.inf
    if c1 > 0.0:
        if c0 >= 0.0:
            return (-c0 + math.sqrt(c0 * c0 + 2.0 * c1 * exp_draw)) / c1
        return -c0 / c1 + math.sqrt(2.0 * exp_draw / c1)
    if c0 <= 0.0:
        return math.inf
    mass = c0 * c0 / (-2.0 * c1)
    if exp_draw >= mass:
        return math.inf
    disc = c0 * c0 + 2.0 * c1 * exp_draw
    return (-c0 + math.sqrt(disc)) / c1


def integrate_affine_velocity_flow(
    coeffs: FlowCoefficients,
    v0,
    threshold: float,
    t_max: float,
    field_sign: float = 1.0,
) -> VelocitySegment:
    """Exact velocity segment for the zero-Christoffel (affine) case.

    The field is the constant -drift, the switch scalar is linear along the
    flow, the divergence vanishes, and the threshold equation inverts in
    closed form.  Produces the same observable quantities as the RK4 route.
    """
    if not coeffs.is_affine:
        raise ValueError("affine fast path requires zero Christoffel symbols")
    v0 = np.asarray(v0, dtype=float)
    phi = -coeffs.drift
    g = field_sign * phi
    Gv0 = coeffs.G @ v0
    Gg = coeffs.G @ g
    # switch scalar along the flow: s(t) = phi . G v(t) with v(t) = v0 + g t
    s0 = float(phi @ Gv0)
    s1 = float(phi @ Gg)
    c0, c1 = field_sign * s0, field_sign * s1   # active rate [c0 + c1 t]^+
    t_hit = ramp_first_arrival(c0, c1, threshold)
    if t_hit <= t_max:
        duration, triggered = t_hit, True
    else:
        duration, triggered = t_max, False
    v_end = v0 + g * duration
    s_end = s0 + s1 * duration
    act_end = max(field_sign * s_end, 0.0)
    opp_end = max(-field_sign * s_end, 0.0)
    return VelocitySegment(
        v0=v0, duration=duration, v_end=v_end, event_triggered=triggered,
        integral_rate_forward=ramp_integral(c0, c1, duration),
        integral_rate_reverse=ramp_integral(-c0, -c1, duration),
        integral_divergence=0.0,
        rate_at_end=(act_end, opp_end),
        checkpoints=[(0.0, v0.copy()), (duration, v_end.copy())],
    )
