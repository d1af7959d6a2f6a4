"""Multi-lane road model estimation from lane-marking features.

Lines are piecewise cubics ``y = f(x)`` in the vehicle frame, fitted per frame
by alternating nearest-line association with an equality-constrained
Gauss-Newton fit and anchored to the previous frame through odometry.
"""

from .config import Config, ConfigError, load_config, write_config
from .evaluation import compare_models, run_eval, run_scenario
from .fitting import FitFailure, fit
from .pipeline import FrameReport, TrackState, step
from .simulator import (ScenarioSpec, build_centerline, double_bend_scenario, load_scenario,
                        simulate)
from .types import AttributeMass, Feature, LaneModel, Line, OdometryDelta, eval_line

__all__ = [
    "AttributeMass", "Config", "ConfigError", "Feature", "FitFailure", "FrameReport",
    "LaneModel", "Line", "OdometryDelta", "ScenarioSpec", "TrackState", "build_centerline",
    "compare_models", "double_bend_scenario", "eval_line", "fit", "load_config",
    "load_scenario", "run_eval", "run_scenario", "simulate", "step", "write_config",
]
