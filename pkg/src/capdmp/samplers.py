"""Chain drivers: standard BPS, SL-PDMP, and CA-BPS.

The standard BPS baseline is simulated exactly (up to thinning): the bounce
clock uses exact inversion of the rate integral on constant-Hessian targets
and per-cell polynomial-extremum bounds on the banana, so it carries no
discretization bias.  The two split-flow samplers run through the
path-space Metropolis engine and record window-end positions.

Budgets are expressed as a window/event count, a continuous trajectory
time, or wall-clock seconds; the clock is checked at window (or event)
granularity, so wall-budgeted runs may overshoot slightly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .flows import DEFAULT_STEPS_PER_UNIT, DEFAULT_T_CAP, MODE_CA, MODE_SL
from .metro import PdmpState, Phase, SamplerModel, mh_step
from .softabs import DEFAULT_HARDNESS
from .targets import BananaTarget, TargetModel


@dataclass
class Budget:
    """Stopping rule: whichever configured limit is hit first wins."""

    windows: int | None = None          # Metropolised window count
    events: int | None = None           # BPS event count
    trajectory_time: float | None = None  # BPS continuous time
    seconds: float | None = None        # wall clock

    def validate(self):
        if all(v is None for v in (self.windows, self.events,
                                   self.trajectory_time, self.seconds)):
            raise ContractViolation("budget must set at least one limit")
        for v in (self.windows, self.events, self.trajectory_time, self.seconds):
            if v is not None and v < 0:
                raise ContractViolation("budget limits must be nonnegative")


@dataclass
class ChainOutput:
    """Positions plus event/acceptance ledger for one chain."""

    samples: np.ndarray
    bounces: int = 0
    flips: int = 0
    refreshments: int = 0
    accepts: int = 0
    rejects: int = 0
    windows: int = 0
    invalid_proposals: int = 0
    trajectory_time: float = 0.0
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def total_events(self) -> int:
        return self.bounces + self.flips + self.refreshments


def collect_samples(chain: ChainOutput, burn_in_fraction: float) -> np.ndarray:
    """Drop the leading burn-in fraction; keeps ceil((1 - f) n) samples."""
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ContractViolation("burn-in fraction must be in [0, 1)")
    n = len(chain.samples)
    if n == 0:
        return chain.samples
    n_keep = math.ceil((1.0 - burn_in_fraction) * n)
    return chain.samples[n - n_keep:]


# ---------------------------------------------------------------------------
# Standard BPS


def _constant_hessian_bounce_time(c0: float, c1: float, exp_draw: float) -> float:
    """Exact first-arrival time for rate [c0 + c1 t]^+ with c1 > 0."""
    if c1 <= 0.0:
        # rate constant in t (c1 = 0): only positive part of c0 matters
        return exp_draw / c0 if c0 > 0.0 else math.inf
    if c0 >= 0.0:
        return (-c0 + math.sqrt(c0 * c0 + 2.0 * c1 * exp_draw)) / c1
    t0 = -c0 / c1
    return t0 + math.sqrt(2.0 * exp_draw / c1)


def _banana_rate_poly(target: BananaTarget, x, v) -> np.ndarray:
    """Coefficients of the cubic t -> -v . grad log pi(x + v t)."""
    a, b = target.a, target.b
    x1, x2 = float(x[0]), float(x[1])
    v1, v2 = float(v[0]), float(v[1])
    # q(t) = x2(t) - x1(t)^2 and A(t) = x1(t)
    q = (x2 - x1 * x1, v2 - 2.0 * x1 * v1, -v1 * v1)
    # (A q)(t), a fixed-length cubic
    aq = (x1 * q[0],
          x1 * q[1] + v1 * q[0],
          x1 * q[2] + v1 * q[1],
          v1 * q[2])
    g1 = 4.0 * b * np.array(aq)
    g1[0] += 2.0 * a * (1.0 - x1)
    g1[1] += 2.0 * a * (-v1)
    g2 = -2.0 * b * np.array([q[0], q[1], q[2], 0.0])
    return -(v1 * g1 + v2 * g2)


def _poly_cell_max(coeffs: np.ndarray, t_lo: float, t_hi: float) -> float:
    """Maximum of the polynomial over [t_lo, t_hi] (the exact thinning bound)."""
    cand = [t_lo, t_hi]
    der = np.polynomial.polynomial.polyder(coeffs)
    if der.shape[0] > 1:
        roots = np.roots(der[::-1])
        for r in roots:
            if abs(r.imag) < 1e-12 and t_lo < r.real < t_hi:
                cand.append(float(r.real))
    elif der.shape[0] == 1 and der[0] == 0.0:
        pass
    vals = np.polynomial.polynomial.polyval(np.array(cand), coeffs)
    return max(0.0, float(vals.max()))


class _BounceClock:
    """Per-target exact bounce-time simulation for standard BPS."""

    def __init__(self, target: TargetModel, grid_step: float):
        self.target = target
        self.grid_step = grid_step
        if target.constant_hessian:
            self.kind = "linear"
            self.precision = -target.hessian(np.zeros(target.d))
        elif isinstance(target, BananaTarget):
            self.kind = "poly"
        else:
            raise ContractViolation(
                "standard BPS bounce simulation supports constant-Hessian "
                f"targets and the banana target, not '{target.name}'"
            )

    def next_bounce(self, x, v, horizon: float, rng: np.random.Generator) -> float:
        """Time to the next bounce from (x, v), or inf if beyond `horizon`."""
        if self.kind == "linear":
            c0 = -float(np.dot(v, self.target.gradient(x)))
            c1 = float(v @ self.precision @ v)
            t = _constant_hessian_bounce_time(c0, c1, rng.exponential())
            return t if t <= horizon else math.inf
        # banana: per-cell thinning against the cubic's exact extremum bound
        coeffs = _banana_rate_poly(self.target, x, v)
        t_cell = 0.0
        while t_cell < horizon:
            t_end = min(t_cell + self.grid_step, horizon)
            bound = _poly_cell_max(coeffs, t_cell, t_end)
            if bound <= 0.0:
                t_cell = t_end
                continue
            t = t_cell
            while True:
                t += rng.exponential() / bound
                if t >= t_end:
                    break
                val = float(np.polynomial.polynomial.polyval(t, coeffs))
                if val > 0.0 and rng.random() * bound < val:
                    return t
            t_cell = t_end
        return math.inf


def run_bps(
    target: TargetModel,
    budget: Budget,
    rng: np.random.Generator | int,
    refresh_rate: float = 1.0,
    grid_step: float = 0.1,
    record_dt: float = 0.1,
    x0=None,
) -> ChainOutput:
    """Euclidean BPS with v ~ Normal(0, I) and Poisson refreshment.

    Positions are recorded at fixed `record_dt` spacing along the continuous
    trajectory.
    """
    budget.validate()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if refresh_rate < 0:
        raise ContractViolation("refresh rate must be nonnegative")
    d = target.d
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    v = rng.standard_normal(d)
    clock = _BounceClock(target, grid_step)

    out = ChainOutput(samples=np.empty((0, d)),
                      config={"sampler": "bps", "refresh_rate": refresh_rate,
                              "grid_step": grid_step, "record_dt": record_dt})
    samples = []
    t = 0.0
    next_record = record_dt
    t_start = time.monotonic()
    horizon_default = 50.0 * max(record_dt, 1.0)

    def exhausted() -> bool:
        if budget.events is not None and out.total_events >= budget.events:
            return True
        if budget.trajectory_time is not None and t >= budget.trajectory_time:
            return True
        if budget.seconds is not None and time.monotonic() - t_start >= budget.seconds:
            return True
        return False

    while not exhausted():
        horizon = horizon_default
        if budget.trajectory_time is not None:
            horizon = min(horizon, budget.trajectory_time - t)
        if horizon <= 0:
            break
        t_refresh = rng.exponential() / refresh_rate if refresh_rate > 0 else math.inf
        t_bounce = clock.next_bounce(x, v, min(horizon, t_refresh), rng)
        dt = min(t_bounce, t_refresh, horizon)
        # record positions passed along this linear stretch
        while next_record <= t + dt:
            samples.append(x + v * (next_record - t))
            next_record += record_dt
        x = x + v * dt
        t += dt
        if t_bounce <= min(t_refresh, horizon):
            grad = target.gradient(x)
            norm2 = float(np.dot(grad, grad))
            if norm2 > 0.0:
                v = v - 2.0 * float(np.dot(v, grad)) / norm2 * grad
            out.bounces += 1
        elif t_refresh < horizon:
            v = rng.standard_normal(d)
            out.refreshments += 1

    out.samples = np.array(samples) if samples else np.empty((0, d))
    out.trajectory_time = t
    out.wall_seconds = time.monotonic() - t_start
    return out


# ---------------------------------------------------------------------------
# Metropolised split-flow chains


def _run_metropolised(
    target: TargetModel,
    mode: str,
    budget: Budget,
    rng: np.random.Generator | int,
    window_T: float = 0.5,
    grid_step: float = 0.1,
    hardness: float = DEFAULT_HARDNESS,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
    t_cap: float = DEFAULT_T_CAP,
    cache_constant_metric: bool = True,
    x0=None,
) -> ChainOutput:
    budget.validate()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    model = SamplerModel(target, mode, hardness=hardness,
                         cache_constant_metric=cache_constant_metric)
    x = np.zeros(target.d) if x0 is None else np.asarray(x0, dtype=float).copy()
    state = PdmpState(x, np.zeros(target.d), Phase.POSITION)
    out = ChainOutput(samples=np.empty((0, target.d)),
                      config={"sampler": mode, "window_T": window_T,
                              "grid_step": grid_step, "hardness": hardness})
    samples = []
    t_start = time.monotonic()

    def exhausted() -> bool:
        if budget.windows is not None and out.windows >= budget.windows:
            return True
        if budget.seconds is not None and time.monotonic() - t_start >= budget.seconds:
            return True
        return False

    while not exhausted():
        state, report = mh_step(
            state, model, window_T, grid_step, rng,
            steps_per_unit=steps_per_unit, t_cap=t_cap,
        )
        out.windows += 1
        out.refreshments += 1
        out.bounces += report.bounces
        out.flips += report.flips
        if report.invalid:
            out.invalid_proposals += 1
        if report.accepted:
            out.accepts += 1
        else:
            out.rejects += 1
        samples.append(state.x.copy())

    out.samples = np.array(samples) if samples else np.empty((0, target.d))
    out.wall_seconds = time.monotonic() - t_start
    return out


def run_sl_pdmp(target, budget, rng, **kwargs) -> ChainOutput:
    """Split Lagrangian PDMP chain (single flip event type)."""
    return _run_metropolised(target, MODE_SL, budget, rng, **kwargs)


def run_ca_bps(target, budget, rng, **kwargs) -> ChainOutput:
    """Covariance-adaptive BPS chain (bounce and flip event types)."""
    return _run_metropolised(target, MODE_CA, budget, rng, **kwargs)


SAMPLER_RUNNERS = {
    "bps": run_bps,
    "sl_pdmp": run_sl_pdmp,
    "ca_bps": run_ca_bps,
}
