"""Event rates, the metric-aware bounce reflection, and velocity refreshment.

The phase-switch scalar is the signed quantity whose positive and negative
parts give the switch rates in the two flow phases.  It has two independent
closed forms that must agree everywhere:

  * fixed velocity (position phase):
        s = (1/2) (G^{ij} - v^i v^j) G_{ij,k} v^k  [+ v . grad log pi in SL]
  * fixed position (velocity phase):
        s = 2 tr(gamma) . v + Phi_v^T G v

SL mode keeps the v . grad log pi term; CA mode drops it and compensates
with bounce events at the classical rate [-v . grad log pi]^+.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroGradientError
from .flows import MODE_CA, MODE_SL, FlowCoefficients, velocity_field
from .softabs import MetricState

ZERO_GRAD_TOL = 1e-13


def positive_part(x: float) -> float:
    return x if x > 0.0 else 0.0


def bps_rate(grad, v) -> float:
    """Classical bounce rate [-v . grad log pi]^+ (zero in the velocity phase)."""
    return positive_part(-float(np.dot(v, grad)))


def flip_scalar_from_directional(
    metric: MetricState, dG_v, grad_logpi, v, mode: str
) -> float:
    """Phase-switch scalar from the directional metric derivative dG/dv.

    This is the fixed-velocity form used while the position flows; only the
    directional derivative of the metric is contracted.
    """
    v = np.asarray(v, dtype=float)
    dG_v = np.asarray(dG_v, dtype=float)
    tr_term = float(np.einsum("ij,ij->", metric.G_inv, dG_v))
    quad_term = float(np.dot(v, dG_v @ v))
    s = 0.5 * (tr_term - quad_term)
    if mode == MODE_SL:
        s += float(np.dot(v, grad_logpi))
    elif mode != MODE_CA:
        raise ValueError(f"unknown mode '{mode}'")
    return s


def flip_scalar_from_coefficients(coeffs: FlowCoefficients, v) -> float:
    """Phase-switch scalar from precomputed flow coefficients (fixed position).

    Equals flip_scalar_from_directional at the same state; the two formulas
    are kept independent so tests can cross-check them.
    """
    v = np.asarray(v, dtype=float)
    phi_v = velocity_field(coeffs, v)
    return 2.0 * float(np.dot(coeffs.trace_gamma, v)) + float(phi_v @ coeffs.G @ v)


@dataclass(frozen=True)
class RatePack:
    """All event-rate ingredients at one state (x, v)."""

    bps: float           # [-v . grad log pi]^+
    switch_sl: float     # SL phase-switch scalar
    switch_ca: float     # CA phase-switch scalar (switch_sl - v . grad log pi)
    v_dot_grad: float


def rate_pack(metric: MetricState, dG_v, grad_logpi, v) -> RatePack:
    v = np.asarray(v, dtype=float)
    vg = float(np.dot(v, grad_logpi))
    s_ca = flip_scalar_from_directional(metric, dG_v, grad_logpi, v, MODE_CA)
    return RatePack(bps=positive_part(-vg), switch_sl=s_ca + vg, switch_ca=s_ca,
                    v_dot_grad=vg)


def reflect(v, grad, metric: MetricState) -> np.ndarray:
    """Bounce reflection in the metric's inner product.

    F(v) = v - 2 (v . g) / (g^T G^{-1} g) * G^{-1} g.  Flips the sign of
    v . g, is an involution, preserves v^T G v (hence the velocity
    distribution), and has unit Jacobian.
    """
    v = np.asarray(v, dtype=float)
    grad = np.asarray(grad, dtype=float)
    norm = float(np.linalg.norm(grad))
    if norm <= ZERO_GRAD_TOL:
        raise ZeroGradientError("cannot reflect against a zero gradient")
    u = metric.G_inv @ grad
    denom = float(np.dot(grad, u))
    if denom <= 0.0 or not np.isfinite(denom):
        raise ZeroGradientError("degenerate gradient norm in reflection")
    return v - (2.0 * float(np.dot(v, grad)) / denom) * u


def refresh_velocity(metric: MetricState, rng: np.random.Generator) -> np.ndarray:
    """Draw v ~ Normal(0, G^{-1}) through the stored factor."""
    z = rng.standard_normal(metric.d)
    return metric.sample_factor @ z
