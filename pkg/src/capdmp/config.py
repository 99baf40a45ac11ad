"""Flat key-value configuration files.

Format: one `section.key = value` assignment per line, `#` comments, blank
lines ignored.  Values are parsed as int, float, bool, a comma-separated
number list, or a bare string.  The registry below is the single source of
truth for recognized keys; the CLI help text and the doc-drift test are
generated from it.
"""

from __future__ import annotations

from .errors import ConfigError

# key -> (default, help text)
KEY_REGISTRY = {
    "target.name": ("banana", "target family: banana | gaussian | mixture"),
    "target.a": (1.0 / 20.0, "banana straightness parameter a"),
    "target.b": (5000.0, "banana valley-narrowness parameter b"),
    "target.dimension": (20, "gaussian dimensionality"),
    "target.delta": (100.0, "gaussian spectral-gap parameter delta"),
    "metric.hardness": (1e3, "SoftAbs hardness (eigenvalue softening sharpness)"),
    "ode.steps_per_unit_time": (200, "RK4 steps per unit time in the velocity flow"),
    "ode.t_max_velocity": (1.0, "step-size cap horizon for the velocity flow"),
    "metro.window_T": (0.5, "proposal window length / refreshment period"),
    "metro.grid_step": (0.1, "position-phase rate-freezing cell length"),
    "metro.seed": (0, "chain seed for single-chain runs"),
    "sampler.kind": ("ca_bps", "sampler: bps | sl_pdmp | ca_bps"),
    "sampler.window_T": (0.5, "window length override for this sampler"),
    "sampler.grid_step": (0.1, "grid step override for this sampler"),
    "sampler.refresh_rate": (1.0, "BPS Poisson refreshment rate"),
    "sampler.burn_in": (0.1, "leading fraction of samples dropped"),
    "sampler.record_dt": (0.1, "BPS trajectory recording interval"),
    "sampler.cache_constant_metric": (True, "reuse metric tables on constant-Hessian targets"),
    "budget.windows": (None, "window budget (Metropolised samplers)"),
    "budget.events": (None, "event budget (BPS)"),
    "budget.seconds": (None, "wall-clock budget in seconds"),
    "experiment.samplers": ("bps,ca_bps", "comma list of samplers to benchmark"),
    "experiment.replicates": (100, "replicates per (target, sampler)"),
    "experiment.budget_seconds": (10.0, "per-replicate wall budget"),
    "experiment.budget_windows": (None, "per-replicate window budget (deterministic runs)"),
    "experiment.budget_events": (None, "per-replicate BPS event budget (deterministic runs)"),
    "experiment.tune": (True, "run nested Brent tuning before the replicates"),
    "experiment.tune_replicates": (None, "replicates per tuning objective evaluation"),
    "experiment.tune_budget_seconds": (None, "budget per tuning objective replicate"),
    "experiment.outer_iterations": (10, "outer Brent evaluations (window length)"),
    "experiment.inner_iterations": (10, "inner Brent evaluations (grid step)"),
    "experiment.base_seed": (0, "base seed for replicate seed derivation"),
    "experiment.timing_in_results": ("measured", "wall_s column mode: measured | blank (byte-reproducible)"),
    "experiment.delta_grid": (None, "gaussian spectral-gap sweep values"),
    "experiment.bps_T": (None, "fixed BPS refresh time (skips its tuning axis)"),
    "experiment.bps_delta": (None, "fixed BPS thinning grid step"),
    "experiment.sl_pdmp_T": (None, "fixed SL-PDMP window length"),
    "experiment.sl_pdmp_delta": (None, "fixed SL-PDMP grid step"),
    "experiment.ca_bps_T": (None, "fixed CA-BPS window length"),
    "experiment.ca_bps_delta": (None, "fixed CA-BPS grid step"),
    "ratio.beta_grid": ("1,2,10,100", "beta values for the efficiency curves"),
    "ratio.epsilon_min": (1e-8, "smallest per-event extra cost in the sweep"),
    "ratio.epsilon_max": (1e-2, "largest per-event extra cost in the sweep"),
    "ratio.epsilon_points": (13, "log-spaced epsilon grid size"),
    "plot.x_min": (-1.5, "metric plot region: left edge"),
    "plot.x_max": (2.5, "metric plot region: right edge"),
    "plot.y_min": (-1.0, "metric plot region: bottom edge"),
    "plot.y_max": (4.0, "metric plot region: top edge"),
    "plot.grid_points": (7, "metric ellipses per axis"),
}

SUBCOMMAND_KEYS = {
    "validate": ["metric.hardness"],
    "run": [k for k in KEY_REGISTRY
            if k.split(".")[0] in ("target", "metric", "ode", "metro", "experiment",
                                   "ratio", "sampler", "budget")],
    "tune": [k for k in KEY_REGISTRY
             if k.split(".")[0] in ("target", "metric", "ode", "experiment")],
    "ratio": [k for k in KEY_REGISTRY if k.split(".")[0] == "ratio"],
    "plot-metric": [k for k in KEY_REGISTRY
                    if k.split(".")[0] in ("target", "metric", "plot")],
    "plot-results": ["ratio.beta_grid"],
}


def _parse_value(raw: str):
    raw = raw.strip()
    if raw == "" or raw.lower() == "none":
        return None
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",")]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config(text: str, known_only: bool = True) -> dict:
    """Parse a flat config; raises ConfigError with line/key diagnostics."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError("empty key", line=lineno)
        if known_only and key not in KEY_REGISTRY:
            raise ConfigError("unrecognized key", line=lineno, key=key)
        if key in values:
            raise ConfigError("duplicate key", line=lineno, key=key)
        values[key] = _parse_value(raw)
    return values


def load_config(path, known_only: bool = True) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    return parse_config(text, known_only=known_only)


def get(values: dict, key: str):
    """Value for `key`, falling back to the registry default."""
    if key not in KEY_REGISTRY:
        raise ConfigError("unknown config key", key=key)
    if key in values and values[key] is not None:
        return values[key]
    return KEY_REGISTRY[key][0]


def as_number_list(value):
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        return [float(part) for part in value.split(",") if part.strip()]
    return [float(v) for v in value]


def grid_value(values: dict, key: str):
    """Like `get`, but a key explicitly set to an empty value means an
    empty grid rather than the registry default."""
    if key in values:
        return as_number_list(values[key]) or []
    return as_number_list(KEY_REGISTRY[key][0])
