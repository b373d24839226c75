"""Guidance MPC and delay-compensating heading control for tethered kites."""

from .guidance import GuidanceController, MpcConfig
from .kinematics import KinematicParams, KiteState, LineAngles
from .reference_path import PathSpec, ReferencePath, SafetyWindow, generate_path
from .robustness import UncertaintyBounds, tune
from .simulator import ScenarioConfig, load_scenario, run_closed_loop, summarize
from .tracking import SteeringParams, TrackingController, TrackingGain

__version__ = "0.1.0"

__all__ = [
    "GuidanceController",
    "KinematicParams",
    "KiteState",
    "LineAngles",
    "MpcConfig",
    "PathSpec",
    "ReferencePath",
    "SafetyWindow",
    "ScenarioConfig",
    "SteeringParams",
    "TrackingController",
    "TrackingGain",
    "UncertaintyBounds",
    "generate_path",
    "load_scenario",
    "run_closed_loop",
    "summarize",
    "tune",
]
