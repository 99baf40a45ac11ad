"""Path-space Metropolis engine for the split-flow PDMP samplers.

A proposal is one window of length T of an approximately simulated PDMP,
accepted or rejected against the ratio of forward and time-reversed path
densities, the target density at the endpoints, and the flow volume factor.

Mechanics of one window:

  * The window starts in the position phase.  The time axis is cut into
    cells of effective length T / ceil(T / grid_step) (so the cell grid is
    mirror-symmetric under time reversal); cells are further split at every
    event.  Within each sub-cell the candidate rates are frozen: the
    proposing mechanism freezes at the sub-cell end it enters through, the
    opposite mechanism at the end *it* would enter through, which is the
    other one.  Both frozen values are recorded in one pass, so the
    reverse-path density needs no re-simulation.
  * Bounce events (CA mode only) reflect the velocity in the metric inner
    product; flip events switch to the velocity phase, which is integrated
    by the ODE solver in `flows` until the switch back, accumulating both
    rate integrals and the divergence integral exactly (up to the solver).
  * A window that would end mid-velocity-phase is discarded as an invalid
    proposal: its reversal starts with a pinned event the opposite
    mechanism cannot generate, so keeping it would break the pairing the
    acceptance ratio relies on.  Discarding is a plain Metropolis
    rejection.

The same routine simulates the time-reversed process (direction -1): the
flow sign flips and the active rates become the opposite-sign parts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProposalInvalid, ZeroGradientError
from .flows import (
    DEFAULT_STEPS_PER_UNIT,
    DEFAULT_T_CAP,
    MODE_CA,
    MODE_SL,
    FlowCoefficients,
    integrate_affine_velocity_flow,
    integrate_velocity_flow,
    make_flow_coefficients,
)
from .rates import (
    bps_rate,
    flip_scalar_from_coefficients,
    flip_scalar_from_directional,
    positive_part,
    reflect,
    refresh_velocity,
)
from .softabs import (
    DEFAULT_HARDNESS,
    build_metric,
    christoffel_symbols,
    divided_differences,
    metric_partial,
)
from .targets import TargetModel


class Phase(enum.Enum):
    POSITION = 0
    VELOCITY = 1


class EventKind(enum.Enum):
    BOUNCE = "bounce"
    FLIP = "flip"


@dataclass(frozen=True)
class PdmpState:
    x: np.ndarray
    v: np.ndarray
    phase: Phase = Phase.POSITION


@dataclass(frozen=True)
class PathEvent:
    time: float
    kind: EventKind
    # time measured from the window end; carried so reversal (which swaps
    # the two fields) is an exact involution in floating point
    time_to_end: float | None = None


@dataclass
class PathSkeleton:
    """Initial state, window length, typed event times, and terminal state."""

    z0: PdmpState
    window: float
    events: list[PathEvent]
    gamma: int
    z_end: PdmpState

    def event_times(self):
        return [e.time for e in self.events]


@dataclass
class PathAccounting:
    """Per-path rate factors and integrals for both traversal directions.

    `act_*` belongs to the mechanism that generated the path, `opp_*` to the
    opposite mechanism evaluating the reversed path; `log_psi` is the volume
    factor of the generated path (velocity segments only).
    """

    direction: int
    complete: bool = True
    act_factors: list = field(default_factory=list)
    opp_factors: list = field(default_factory=list)
    act_integral: float = 0.0
    opp_integral: float = 0.0
    log_psi: float = 0.0
    n_velocity_segments: int = 0


# ---------------------------------------------------------------------------
# Model: target + metric mode bundled with per-point caching


class PointContext:
    """Everything the walker needs at one position: gradient, metric, tables."""

    def __init__(self, model: "SamplerModel", x: np.ndarray):
        self.model = model
        self.x = x
        target = model.target
        self.grad = target.gradient(x)
        if model.cache_constant_metric and target.constant_hessian:
            shared = model._constant_metric_parts()
            self.metric, self.jtable, self.hess_partials = shared
            self._zero_partials = True
        else:
            self.metric = build_metric(target.hessian(x), model.hardness, x=x)
            self.jtable = None
            self.hess_partials = None
            self._zero_partials = False
        self._metric_partials = None
        self._derivs = None
        self._coeffs = None

    def _ensure_tables(self):
        if self.jtable is None:
            self.jtable = divided_differences(self.metric.eigs, self.metric.hardness)
        if self.hess_partials is None:
            d = self.model.target.d
            self.hess_partials = np.stack(
                [self.model.target.hessian_partial(self.x, k) for k in range(d)]
            )

    def directional_metric_derivative(self, v) -> np.ndarray:
        if self._zero_partials:
            return _ZERO_MATRIX_CACHE.setdefault(
                self.metric.d, np.zeros((self.metric.d, self.metric.d))
            )
        self._ensure_tables()
        dH_v = np.einsum("k,kij->ij", np.asarray(v, dtype=float), self.hess_partials)
        return metric_partial(self.metric, self.jtable, dH_v)

    def switch_scalar(self, v) -> float:
        if self._zero_partials and self.model.mode == MODE_CA:
            return 0.0
        dG_v = self.directional_metric_derivative(v)
        return flip_scalar_from_directional(
            self.metric, dG_v, self.grad, v, self.model.mode
        )

    def metric_partials(self) -> np.ndarray:
        if self._metric_partials is None:
            if self._zero_partials:
                d = self.metric.d
                self._metric_partials = np.zeros((d, d, d))
            else:
                self._ensure_tables()
                self._metric_partials = np.stack(
                    [metric_partial(self.metric, self.jtable, dH)
                     for dH in self.hess_partials]
                )
        return self._metric_partials

    def flow_coefficients(self) -> FlowCoefficients:
        if self._coeffs is None:
            derivs = self.model._derivs_for(self)
            self._coeffs = make_flow_coefficients(
                self.metric, derivs, self.grad, self.model.mode,
                divergence_sign=self.model.divergence_sign,
            )
        return self._coeffs

    def log_mu(self, v) -> float:
        # joint log-density up to the constant -(d/2) log 2 pi
        quad = float(v @ self.metric.G @ v)
        return self.model.target.log_density(self.x) - 0.5 * quad + 0.5 * self.metric.log_det

    def reflect(self, v) -> np.ndarray:
        return reflect(v, self.grad, self.metric)

    def refresh(self, rng: np.random.Generator) -> np.ndarray:
        return refresh_velocity(self.metric, rng)


_ZERO_MATRIX_CACHE: dict[int, np.ndarray] = {}


class SamplerModel:
    """A target plus the metric mode (SL or CA) with shared caching."""

    def __init__(
        self,
        target: TargetModel,
        mode: str,
        hardness: float = DEFAULT_HARDNESS,
        cache_constant_metric: bool = True,
        divergence_sign: float = 1.0,
    ):
        if mode not in (MODE_SL, MODE_CA):
            raise ValueError(f"unknown mode '{mode}'")
        self.target = target
        self.mode = mode
        self.hardness = float(hardness)
        self.cache_constant_metric = bool(cache_constant_metric)
        self.divergence_sign = float(divergence_sign)
        self._const_parts = None
        self._const_derivs = None

    def _constant_metric_parts(self):
        if self._const_parts is None:
            d = self.target.d
            x_ref = np.zeros(d)
            metric = build_metric(self.target.hessian(x_ref), self.hardness)
            jtable = divided_differences(metric.eigs, metric.hardness)
            partials = np.zeros((d, d, d))
            self._const_parts = (metric, jtable, partials)
        return self._const_parts

    def _derivs_for(self, ctx: PointContext):
        if ctx._zero_partials:
            if self._const_derivs is None:
                self._const_derivs = christoffel_symbols(
                    ctx.metric, ctx.metric_partials()
                )
            return self._const_derivs
        if ctx._derivs is None:
            ctx._derivs = christoffel_symbols(ctx.metric, ctx.metric_partials())
        return ctx._derivs

    def point_context(self, x) -> PointContext:
        return PointContext(self, np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Cell-level primitives


def draw_cell_event(lam1: float, lam2: float, tau: float, cell_end: float,
                    rng: np.random.Generator):
    """Competing exponential clocks with rates frozen over [tau, cell_end).

    Returns (event_time, kind_index) with kind_index 1 or 2, or (None, None)
    if neither clock fires before the cell ends.
    """
    total = lam1 + lam2
    if total <= 0.0:
        return None, None
    t_event = tau + rng.exponential() / total
    if t_event >= cell_end:
        return None, None
    kind = 1 if rng.random() * total < lam1 else 2
    return t_event, kind


def simulate_two_rate_window(rate_fn, T: float, grid_step: float,
                             rng: np.random.Generator):
    """Piecewise-constant two-clock simulation along [0, T] (no kernels).

    `rate_fn(t)` returns the two rates frozen at each cell start.  Used by
    the distributional tests of the cell engine.
    """
    n_cells = max(1, math.ceil(T / grid_step - 1e-12))
    events = []
    tau = 0.0
    j = 1
    while tau < T - 1e-15:
        cell_end = T * j / n_cells
        lam1, lam2 = rate_fn(tau)
        t_event, kind = draw_cell_event(lam1, lam2, tau, cell_end, rng)
        if t_event is None:
            tau = cell_end
            j += 1
        else:
            events.append((t_event, kind))
            tau = t_event
    return events


@dataclass
class _CellEval:
    ctx: PointContext
    vg: float
    switch: float
    act_bounce: float
    act_flip: float
    opp_bounce: float
    opp_flip: float


def _eval_position_rates(model: SamplerModel, x, v, direction: int) -> _CellEval:
    ctx = model.point_context(x)
    vg = float(np.dot(v, ctx.grad))
    s = ctx.switch_scalar(v)
    if model.mode == MODE_CA:
        act_b = positive_part(-direction * vg)
        opp_b = positive_part(direction * vg)
    else:
        act_b = opp_b = 0.0
    act_f = positive_part(-direction * s)
    opp_f = positive_part(direction * s)
    if not all(map(math.isfinite, (vg, s))):
        raise ProposalInvalid("non-finite rate during position phase")
    return _CellEval(ctx, vg, s, act_b, act_f, opp_b, opp_f)


def _rates_from_ctx(model: SamplerModel, ctx: PointContext, v,
                    direction: int) -> _CellEval:
    """Re-evaluate rates for a new velocity at an already-built context."""
    vg = float(np.dot(v, ctx.grad))
    s = ctx.switch_scalar(v)
    if model.mode == MODE_CA:
        act_b = positive_part(-direction * vg)
        opp_b = positive_part(direction * vg)
    else:
        act_b = opp_b = 0.0
    return _CellEval(ctx, vg, s, act_b, positive_part(-direction * s),
                     opp_b, positive_part(direction * s))


# ---------------------------------------------------------------------------
# The window proposal


def propose_path(
    model: SamplerModel,
    z0: PdmpState,
    T: float,
    grid_step: float,
    gamma: int,
    rng: np.random.Generator,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    t_cap: float = DEFAULT_T_CAP,
):
    """Simulate one window of the mechanism selected by `gamma`.

    gamma=+1 runs the process itself, gamma=-1 its time reversal.  Returns
    a (PathSkeleton, PathAccounting) pair; `accounting.complete` is False
    when the window ended mid-velocity-phase (callers reject).  Raises
    ProposalInvalid on non-finite states.
    """
    if T <= 0:
        raise ValueError("window length must be positive")
    if z0.phase is not Phase.POSITION:
        raise ValueError("proposals start in the position phase")
    direction = 1 if gamma >= 0 else -1
    x = np.asarray(z0.x, dtype=float).copy()
    v = np.asarray(z0.v, dtype=float).copy()
    n_cells = max(1, math.ceil(T / grid_step - 1e-12))

    acct = PathAccounting(direction=direction)
    events: list[PathEvent] = []
    pending_kind: EventKind | None = None
    pending_idx = -1

    tau = 0.0
    j = 1  # index of the next grid boundary, located at T * j / n_cells
    entry = _eval_position_rates(model, x, v, direction)

    def close_subcell(dt: float, exit_eval: _CellEval):
        nonlocal pending_kind
        acct.act_integral += (entry.act_bounce + entry.act_flip) * dt
        acct.opp_integral += (exit_eval.opp_bounce + exit_eval.opp_flip) * dt
        if pending_kind is not None:
            acct.opp_factors[pending_idx] = (
                exit_eval.opp_bounce if pending_kind is EventKind.BOUNCE
                else exit_eval.opp_flip
            )
            pending_kind = None

    while tau < T - 1e-15:
        while j < n_cells and T * j / n_cells <= tau + 1e-15:
            j += 1
        cell_end = T if j >= n_cells else T * j / n_cells
        t_event, kind_idx = draw_cell_event(
            entry.act_bounce, entry.act_flip, tau, cell_end, rng
        )
        if t_event is None:
            dt = cell_end - tau
            x_next = x + direction * v * dt
            exit_eval = _eval_position_rates(model, x_next, v, direction)
            close_subcell(dt, exit_eval)
            tau = cell_end
            x = x_next
            entry = exit_eval
            j += 1
            continue

        # event strictly inside the cell
        dt = t_event - tau
        x_ev = x + direction * v * dt
        exit_eval = _eval_position_rates(model, x_ev, v, direction)
        close_subcell(dt, exit_eval)
        tau = t_event
        x = x_ev

        if kind_idx == 1:  # bounce
            try:
                v_new = exit_eval.ctx.reflect(v)
            except ZeroGradientError:
                # Zero gradient at the drawn point: the rate there is zero,
                # so re-freeze at the event point (bounce clock dies) and
                # keep walking without recording an event.
                entry = _rates_from_ctx(model, exit_eval.ctx, v, direction)
                continue
            events.append(PathEvent(tau, EventKind.BOUNCE, time_to_end=T - tau))
            acct.act_factors.append(entry.act_bounce)
            acct.opp_factors.append(None)
            pending_kind = EventKind.BOUNCE
            pending_idx = len(acct.opp_factors) - 1
            v = v_new
            entry = _rates_from_ctx(model, exit_eval.ctx, v, direction)
            continue

        # flip into the velocity phase
        events.append(PathEvent(tau, EventKind.FLIP, time_to_end=T - tau))
        acct.act_factors.append(entry.act_flip)
        # The opposite mechanism flips here at the end of its (exactly
        # integrated) velocity traversal; its factor is its velocity-phase
        # rate at this state, which is the [-rho]+ part, numerically equal
        # to the position-phase active value at the same state.
        acct.opp_factors.append(exit_eval.act_flip)

        coeffs = exit_eval.ctx.flow_coefficients()

        if coeffs.is_affine:
            seg = integrate_affine_velocity_flow(
                coeffs, v, threshold=rng.exponential(), t_max=T - tau,
                field_sign=float(direction),
            )
        else:
            def seg_rate(w, _c=coeffs, _s=direction):
                sc = flip_scalar_from_coefficients(_c, w)
                return positive_part(_s * sc), positive_part(-_s * sc)

            seg = integrate_velocity_flow(
                coeffs, v, threshold=rng.exponential(), t_max=T - tau,
                rate=seg_rate, steps_per_unit=steps_per_unit, t_cap=t_cap,
                field_sign=float(direction),
            )
        acct.act_integral += seg.integral_rate_forward
        acct.opp_integral += seg.integral_rate_reverse
        acct.log_psi += seg.integral_divergence
        acct.n_velocity_segments += 1

        if not seg.event_triggered:
            # Window ends mid-velocity-phase: not a valid proposal.
            acct.complete = False
            z_end = PdmpState(x.copy(), seg.v_end, Phase.VELOCITY)
            return PathSkeleton(z0, T, events, gamma, z_end), acct

        tau = tau + seg.duration
        v = seg.v_end
        events.append(PathEvent(min(tau, T), EventKind.FLIP,
                                time_to_end=max(T - tau, 0.0)))
        acct.act_factors.append(seg.rate_at_end[0])
        acct.opp_factors.append(None)
        pending_kind = EventKind.FLIP
        pending_idx = len(acct.opp_factors) - 1
        entry = _rates_from_ctx(model, exit_eval.ctx, v, direction)
        j = int(tau * n_cells / T) + 1

    if pending_kind is not None:
        # flip-back landed at the window end; resolve against the state at T
        final_eval = _rates_from_ctx(
            model, model.point_context(x), v, direction
        )
        acct.opp_factors[pending_idx] = (
            final_eval.opp_bounce if pending_kind is EventKind.BOUNCE
            else final_eval.opp_flip
        )

    z_end = PdmpState(x.copy(), v.copy(), Phase.POSITION)
    return PathSkeleton(z0, T, events, gamma, z_end), acct


# ---------------------------------------------------------------------------
# Densities, reversal, acceptance


def path_log_density(skeleton: PathSkeleton, acct: PathAccounting,
                     process: str) -> float:
    """Log path density under the requested process.

    'forward' is the density of the skeleton under the mechanism that
    generated it; 'reverse' is the density of the time-reversed skeleton
    under the opposite mechanism, assembled from the opposite-sign rate
    parts accumulated along the same states.  An event with a nonpositive
    rate under the evaluating process yields -inf, never NaN.
    """
    if process == "forward":
        factors, integral = acct.act_factors, acct.act_integral
    elif process == "reverse":
        factors, integral = acct.opp_factors, acct.opp_integral
    else:
        raise ValueError("process must be 'forward' or 'reverse'")
    if len(factors) != len(skeleton.events):
        raise ValueError("accounting inconsistent with skeleton")
    total = -integral
    for f in factors:
        if f is None or f <= 0.0 or not math.isfinite(f):
            return float("-inf")
        total += math.log(f)
    return total


def reverse_path(skeleton: PathSkeleton) -> PathSkeleton:
    """Time reversal: events mirrored and reordered, endpoints swapped."""
    T = skeleton.window
    rev_events = [
        PathEvent(
            e.time_to_end if e.time_to_end is not None else T - e.time,
            e.kind,
            time_to_end=e.time,
        )
        for e in reversed(skeleton.events)
    ]
    return PathSkeleton(
        z0=skeleton.z_end, window=T, events=rev_events,
        gamma=-skeleton.gamma, z_end=skeleton.z0,
    )


def acceptance_log_ratio(fwd_logp: float, rev_logp: float,
                         mu_log_start: float, mu_log_end: float,
                         log_psi: float, gamma: int) -> float:
    """Log acceptance ratio of the path proposal.

    `fwd_logp` is the log-density of the proposed path under its generating
    mechanism, `rev_logp` that of the reversed path under the opposite
    mechanism, and `log_psi` the proposed path's own volume factor.  The
    two gamma branches place the reversal's volume factor on opposite sides
    of the ratio; they agree because reversal negates it.
    """
    if not (math.isfinite(fwd_logp) and math.isfinite(mu_log_start)):
        return float("-inf")
    if rev_logp == float("-inf") or mu_log_end == float("-inf"):
        return float("-inf")
    if gamma >= 0:
        log_psi_reversal = -log_psi
        return mu_log_end + rev_logp - mu_log_start - fwd_logp - log_psi_reversal
    return mu_log_end + rev_logp + log_psi - mu_log_start - fwd_logp


@dataclass
class StepReport:
    accepted: bool
    bounces: int = 0
    flips: int = 0
    invalid: bool = False
    log_ratio: float = float("nan")


def mh_step(
    state: PdmpState,
    model: SamplerModel,
    window_T: float,
    grid_step: float,
    rng: np.random.Generator,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    t_cap: float = DEFAULT_T_CAP,
):
    """One refresh-propose-accept window.  Returns (state, StepReport).

    The velocity is refreshed from Normal(0, G(x)^{-1}) at the window start
    and the window length doubles as the refreshment period.  On rejection
    the original position is kept with the refreshed velocity.  The
    returned state is always in the position phase.
    """
    ctx0 = model.point_context(state.x)
    v = ctx0.refresh(rng)
    gamma = 1 if rng.random() < 0.5 else -1
    start = PdmpState(np.asarray(state.x, dtype=float), v, Phase.POSITION)
    try:
        skeleton, acct = propose_path(
            model, start, window_T, grid_step, gamma, rng,
            steps_per_unit=steps_per_unit, t_cap=t_cap,
        )
    except ProposalInvalid:
        return start, StepReport(accepted=False, invalid=True)

    report = StepReport(
        accepted=False,
        bounces=sum(1 for e in skeleton.events if e.kind is EventKind.BOUNCE),
        flips=sum(1 for e in skeleton.events if e.kind is EventKind.FLIP),
    )
    if not acct.complete:
        report.invalid = True
        return start, report

    fwd_logp = path_log_density(skeleton, acct, "forward")
    rev_logp = path_log_density(skeleton, acct, "reverse")
    mu_start = ctx0.log_mu(v)
    ctx_end = model.point_context(skeleton.z_end.x)
    mu_end = ctx_end.log_mu(skeleton.z_end.v)
    log_ratio = acceptance_log_ratio(
        fwd_logp, rev_logp, mu_start, mu_end, acct.log_psi, gamma
    )
    report.log_ratio = log_ratio
    if math.log(rng.random()) < log_ratio:
        report.accepted = True
        return PdmpState(skeleton.z_end.x, skeleton.z_end.v, Phase.POSITION), report
    return start, report
