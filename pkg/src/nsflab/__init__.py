"""Finite-difference solver and regularity diagnostics for compressible heat-conducting flow."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .constitutive import FluidParams
from .elliptic import BoundaryData, attach_extensions, extend_temperature, extend_velocity
from .grid import Grid, ScalarField, TempBC, VectorField, build_grid
from .monitor import Monitor, MonitorConfig
from .state import State, Trajectory
from .stepper import RunResult, StepperConfig, run, step

__version__ = "0.1.0"

__all__ = [
    "BoundaryData", "ConfigError", "FluidParams", "Grid", "Monitor", "MonitorConfig", "RunConfig",
    "RunResult", "ScalarField", "State", "StepperConfig", "TempBC", "Trajectory", "VectorField",
    "attach_extensions", "build_grid", "extend_temperature", "extend_velocity", "load_config",
    "parse_config", "run", "step",
]
