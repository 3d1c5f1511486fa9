"""Attainment regions: where a controller succeeds, and how to get there."""

__version__ = "0.1.0"

from .calibration import FeatureCalibrator, LinearMap, apply_map, calibrated_predict, decode_binary, fit_linear_map
from .core import (
    DIM_NAMES,
    BoundsError,
    ConfigError,
    DatasetError,
    DomainBounds,
    FeatureParameterPoint,
    FeatureVector,
    GainVector,
    SchemaVersionError,
    TrialRecord,
    denormalize,
    load_dataset,
    normalize,
    save_dataset,
)
from .gp import AttainmentGP, FitError, GpHyperparams, OptConfig, fit, load_model, predict, save_model
from .region import AttainmentQuery, SliceSpec, is_attainable, slice_grid, success_probability
from .simulator import SimConfig, reference_plan, run_trial, sample_dataset
from .solver import FreezeMask, SolutionResult, SolverConfig, brute_force_nearest, solve

__all__ = [
    "AttainmentGP",
    "AttainmentQuery",
    "BoundsError",
    "ConfigError",
    "DIM_NAMES",
    "DatasetError",
    "DomainBounds",
    "FeatureCalibrator",
    "FeatureParameterPoint",
    "FeatureVector",
    "FitError",
    "FreezeMask",
    "GainVector",
    "GpHyperparams",
    "LinearMap",
    "OptConfig",
    "SchemaVersionError",
    "SimConfig",
    "SliceSpec",
    "SolutionResult",
    "SolverConfig",
    "TrialRecord",
    "apply_map",
    "brute_force_nearest",
    "calibrated_predict",
    "decode_binary",
    "denormalize",
    "fit",
    "fit_linear_map",
    "is_attainable",
    "load_dataset",
    "load_model",
    "normalize",
    "predict",
    "reference_plan",
    "run_trial",
    "sample_dataset",
    "save_dataset",
    "save_model",
    "slice_grid",
    "solve",
    "success_probability",
]
