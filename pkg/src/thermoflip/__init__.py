"""Simulation, calibration and control for a motor-flipped dual-sided Peltier display."""

from .calibration import (FitReport, Observation, bundled_observations, calibrated_params, fit,
                          select_optimal_voltage, sweep)
from .controller import ControllerConfig, ElementState, Phase, Sensation, command_sensation, tick
from .pattern import compile_pattern, format_pattern, parse_pattern
from .thermal import (BlowUpError, DriveInput, Face, LifetimeResult, PeltierParams, ThermalState,
                      TimeSeries, lifetime, simulate)

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "ControllerConfig", "DriveInput", "ElementState", "Face", "FitReport",
    "LifetimeResult", "Observation", "PeltierParams", "Phase", "Sensation", "ThermalState",
    "TimeSeries", "bundled_observations", "calibrated_params", "command_sensation",
    "compile_pattern", "fit", "format_pattern", "lifetime", "parse_pattern",
    "select_optimal_voltage", "simulate", "sweep", "tick",
]
