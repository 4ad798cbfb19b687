"""Certify nonclassical collective-spin states from Faraday-rotation photon counts.

Pipeline: per-angle photon histograms -> pooled histogram -> even
magnetization moments (factorial moments or a deconvolved marginal) ->
radial moments -> minimized trial-function mean <F> versus cutoff order,
with half-sample bootstrap errors.
"""
__version__ = "0.1.0"

from .channel import predict_histogram, simulate_experiment, simulate_from_histogram
from .criterion import (
    PipelineConfig,
    SweepResult,
    TrialSolution,
    bootstrap_axis_moments,
    bootstrap_sweep,
    run_pipeline,
    solve_coefficients,
    sweep_cutoff,
)
from .model import (
    DEFAULT_ANGLES,
    AngleHistogram,
    AxisMoments,
    DetectionParams,
    MarginalDistribution,
    PooledHistogram,
    PulseRecord,
    RadialMoments,
    pool_angles,
    read_measurements,
    validate_records,
)
from .moments import axis_moments_factorial, axis_moments_from_marginal, radial_from_axis
from .reconstruct import DeconvolutionSettings, deconvolve, g_to_G, reconstruct_marginal
from .synthetic import SyntheticState, exact_axis_moments, exact_marginal, exact_pooled_histogram

__all__ = [
    "DEFAULT_ANGLES",
    "AngleHistogram",
    "AxisMoments",
    "DeconvolutionSettings",
    "DetectionParams",
    "MarginalDistribution",
    "PipelineConfig",
    "PooledHistogram",
    "PulseRecord",
    "RadialMoments",
    "SweepResult",
    "SyntheticState",
    "TrialSolution",
    "axis_moments_factorial",
    "axis_moments_from_marginal",
    "bootstrap_axis_moments",
    "bootstrap_sweep",
    "deconvolve",
    "exact_axis_moments",
    "exact_marginal",
    "exact_pooled_histogram",
    "g_to_G",
    "pool_angles",
    "predict_histogram",
    "radial_from_axis",
    "read_measurements",
    "reconstruct_marginal",
    "run_pipeline",
    "simulate_experiment",
    "simulate_from_histogram",
    "solve_coefficients",
    "sweep_cutoff",
    "validate_records",
]
