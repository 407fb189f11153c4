"""Compensator synthesis and model-risk-aware anomaly detection for
discrete-time linear systems with multiplicative and additive noise."""

__version__ = "0.1.0"

from .detector import (
    ComparisonReport,
    CompensatorReport,
    ThresholdReport,
    compare_compensators,
    detect,
    tune_threshold,
)
from .model import (
    ConfigError,
    NoiseDirection,
    RunOptions,
    SynthesisWeights,
    UncertainLinearSystem,
    ValidationReport,
    build_pendulum,
    load_config,
    validate_system,
    validate_weights,
    write_config,
)
from .moments import (
    MomentTrajectory,
    NotCompensatedError,
    SecondMomentOperator,
    StabilityDiagnostics,
    SteadyStateMoments,
    build_operator,
    expected_q,
    propagate_moments,
    stability_diagnostics,
    steady_state,
)
from .sim import (
    AnomalySpec,
    EmpiricalStats,
    NoiseSampler,
    SimulationTrace,
    empirical_moments,
    empirical_stats,
    read_trace_csv,
    simulate,
    write_trace_csv,
)
from .synthesis import (
    CompensatorGains,
    SolverOptions,
    riccati_residuals,
    solve_coupled_riccati,
    solve_lqg,
    strip_multiplicative,
)

__all__ = [
    "__version__",
    "AnomalySpec",
    "ComparisonReport",
    "CompensatorGains",
    "CompensatorReport",
    "ConfigError",
    "EmpiricalStats",
    "MomentTrajectory",
    "NoiseDirection",
    "NoiseSampler",
    "NotCompensatedError",
    "RunOptions",
    "SecondMomentOperator",
    "SimulationTrace",
    "SolverOptions",
    "StabilityDiagnostics",
    "SteadyStateMoments",
    "SynthesisWeights",
    "ThresholdReport",
    "UncertainLinearSystem",
    "ValidationReport",
    "build_operator",
    "build_pendulum",
    "compare_compensators",
    "detect",
    "empirical_moments",
    "empirical_stats",
    "expected_q",
    "load_config",
    "propagate_moments",
    "read_trace_csv",
    "riccati_residuals",
    "simulate",
    "solve_coupled_riccati",
    "solve_lqg",
    "stability_diagnostics",
    "steady_state",
    "strip_multiplicative",
    "tune_threshold",
    "validate_system",
    "validate_weights",
    "write_config",
    "write_trace_csv",
]
