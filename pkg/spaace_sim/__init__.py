"""Set-point modulation (SPAACE / SPAACE-M) simulation toolkit."""
from .core import ConfigError, ControllerParams, Mode, PreconditionError, Sample, SpaaceError, Trace, validate
from .modulator import Modulator, ModulatorState, modulate_step, reset
from .plant import Fault, PlantParams, PlantState, RefStep, apply_event, step
from .metrics import StepMetrics, overshoot, rise_time, settling_time, summarize
from .scenario import ComparisonRow, Scenario, compare, get_case, run, sweep
from .calibration import CalibrationTargets, calibrate

__version__ = "1.0.0"
