"""Covariance-adaptive piecewise-deterministic MCMC samplers.

Three samplers over a shared split-flow core: the classical bouncy particle
sampler (exact event times), and two metric-aware variants (SL-PDMP and
CA-BPS) simulated through a path-space Metropolis correction, plus a
benchmark harness with KS scoring, nested Brent tuning, and an
efficiency-ratio cost model.
"""

from .bench import (
    ExperimentConfig,
    TargetSpec,
    brent_minimize,
    ca_vs_bps_efficiency,
    efficiency_ratio,
    ks_distance,
    nested_brent,
    run_experiment,
)
from .errors import (
    ConfigError,
    ContractViolation,
    NumericalError,
    ProposalInvalid,
    ZeroGradientError,
)
from .flows import (
    FlowCoefficients,
    VelocitySegment,
    integrate_velocity_flow,
    make_flow_coefficients,
    position_flow,
    segment_volume_log,
    velocity_divergence,
    velocity_field,
)
from .metro import (
    EventKind,
    PathAccounting,
    PathSkeleton,
    PdmpState,
    Phase,
    SamplerModel,
    acceptance_log_ratio,
    mh_step,
    path_log_density,
    propose_path,
    reverse_path,
)
from .rates import (
    RatePack,
    bps_rate,
    flip_scalar_from_coefficients,
    flip_scalar_from_directional,
    rate_pack,
    reflect,
    refresh_velocity,
)
from .samplers import (
    Budget,
    ChainOutput,
    collect_samples,
    run_bps,
    run_ca_bps,
    run_sl_pdmp,
)
from .softabs import (
    MetricDerivatives,
    MetricState,
    build_metric,
    christoffel_symbols,
    directional_metric_derivative,
    divided_differences,
    metric_partial,
    metric_partials_from_hessian,
    softabs_scalar,
)
from .targets import (
    AnisotropicGaussianTarget,
    BananaTarget,
    GaussianMixtureTarget,
    TargetModel,
    fd_gradient,
    fd_hessian,
    fd_oracle,
    fd_partial,
    make_target,
)

__version__ = "0.1.0"
