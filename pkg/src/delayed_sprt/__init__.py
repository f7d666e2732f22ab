"""Delayed-start running-MLE and normal-mixture sequential tests.

Boundary calibration, streaming test statistics, confidence sequences for
stabilized estimating equations, an adaptive-lambda variant and a Monte Carlo
harness.
"""
from .adaptive import AdaptiveLambdaTest, calibrate_adaptive, calibrate_svs_delayed
from .boundary import BoundaryKind, CalibratedBoundary, calibrate, h1, h2_eta, htilde, radius
from .esteq import StabilizedEstimatingEquation, cs_theta, esteq_step, new_esteq_state
from .errors import ConfigError, DomainError, NumericError
from .sim import ExperimentConfig, build_time_grid, run_efficiency, run_type1, lambda_scan
from .teststat import SequentialTest, new_state, update

__version__ = "0.1.0"

__all__ = [
    "AdaptiveLambdaTest",
    "BoundaryKind",
    "CalibratedBoundary",
    "ConfigError",
    "DomainError",
    "ExperimentConfig",
    "NumericError",
    "SequentialTest",
    "StabilizedEstimatingEquation",
    "build_time_grid",
    "calibrate",
    "calibrate_adaptive",
    "calibrate_svs_delayed",
    "cs_theta",
    "esteq_step",
    "h1",
    "h2_eta",
    "htilde",
    "lambda_scan",
    "new_esteq_state",
    "new_state",
    "radius",
    "run_efficiency",
    "run_type1",
    "update",
]
