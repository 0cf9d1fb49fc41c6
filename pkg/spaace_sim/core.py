"""
Shared domain types for the set-point modulation toolkit.

Conventions: every signal is a per-unit float and every time is in seconds.
Millisecond/microsecond inputs are converted at the edges (CLI, config files)
through ``parse_time``.
"""
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

TRACE_COLUMNS = ["t", "x_ref", "x_ref_mod", "x"]


class SpaaceError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SpaaceError):
    """Invalid parameters, overrides or config files. Carries every violation."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class PreconditionError(SpaaceError):
    """A caller broke an operation's precondition (e.g. non-monotone sampling)."""


class Mode(str, Enum):
    BASE = "base"
    SPAACE = "spaace"
    SPAACE_M = "spaace_m"

    @classmethod
    def parse(cls, value: Union[str, "Mode"]) -> "Mode":
        if isinstance(value, Mode):
            return value
        key = re.sub(r"[\s\-]", "_", str(value).strip().lower())
        aliases = {"base": cls.BASE, "spaace": cls.SPAACE, "spaace_m": cls.SPAACE_M, "spaacem": cls.SPAACE_M}
        if key not in aliases:
            raise ValueError(f"unknown mode '{value}' (expected one of: base, spaace, spaace_m)")
        return aliases[key]


class ControllerParams(BaseModel):
    """Modulator constants. T_pred is derived from n and t_sample, never stored."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Mode = Mode.SPAACE_M
    m1: float = 0.15
    m2: float = -0.45
    n: int = 4
    t_sample: float = 2e-4
    epsilon: float = 0.05
    j: int = 2
    strict_eq7: bool = True
    saturation: float = 1.5

    @field_validator("mode", mode="before")
    @classmethod
    def _parse_mode(cls, value: Any) -> Mode:
        return Mode.parse(value)

    @field_validator("t_sample")
    @classmethod
    def _check_t_sample(cls, value: float) -> float:
        if not value > 0 or not math.isfinite(value):
            raise ValueError("t_sample must be positive")
        return value

    @field_validator("n")
    @classmethod
    def _check_n(cls, value: int) -> int:
        if value < 1:
            raise ValueError("n must be ≥ 1")
        return value

    @field_validator("j")
    @classmethod
    def _check_j(cls, value: int) -> int:
        if value < 1:
            raise ValueError("j must be ≥ 1")
        return value

    @field_validator("epsilon")
    @classmethod
    def _check_epsilon(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("epsilon must be ≥ 0")
        return value

    @field_validator("saturation")
    @classmethod
    def _check_saturation(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("saturation must be positive")
        return value

    @field_validator("m1", "m2")
    @classmethod
    def _check_gain(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("gains must be finite")
        return value

    @property
    def t_pred(self) -> float:
        return self.n * self.t_sample

    def with_overrides(self, **overrides: Any) -> "ControllerParams":
        """Returns a validated copy; raises ConfigError listing every violation."""
        return build_params(ControllerParams, {**self.model_dump(), **overrides})


def _violations(exc: ValidationError) -> List[str]:
    messages = []
    for err in exc.errors():
        msg = err.get("msg", "")
        if msg.startswith("Value error, "):
            messages.append(msg[len("Value error, "):])
        else:
            loc = ".".join(str(part) for part in err.get("loc", ()))
            messages.append(f"{loc}: {msg}" if loc else msg)
    return messages


def build_params(model: type, data: Mapping[str, Any]) -> Any:
    """Validates a mapping into ``model``; raises ConfigError with every violation."""
    try:
        return model.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigError(_violations(exc)) from None


def validate(params: Union[ControllerParams, Mapping[str, Any]]) -> List[str]:
    """
    Checks controller params against their invariants.

    Args:
        params: A ControllerParams instance or a raw mapping (e.g. parsed overrides).

    Returns:
        List[str]: Every violated invariant by name; empty when the params are valid.
    """
    data = params.model_dump() if isinstance(params, BaseModel) else dict(params)
    try:
        ControllerParams.model_validate(data)
    except ValidationError as exc:
        return _violations(exc)
    return []


_TIME_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(s|ms|us|µs)?\s*$")


def parse_time(value: Union[str, float, int]) -> float:
    """Parses '3ms', '20us', '0.5 s' or a bare number (seconds) into seconds."""
    if isinstance(value, (int, float)):
        return float(value)
    match = _TIME_RE.match(value)
    if not match:
        raise ValueError(f"invalid time value '{value}' (use a number with an optional s/ms/us suffix)")
    number, unit = match.groups()
    if unit is None:
        return float(number)
    # Dividing by the exact power of ten keeps '0.2ms' equal to the literal 0.0002.
    divisor = {"s": 1, "ms": 1000, "us": 1_000_000, "µs": 1_000_000}[unit]
    return float(number) / divisor


def format_number(value: float) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(value))


@dataclass(frozen=True)
class Sample:
    t: float
    x_ref: float
    x_ref_mod: float
    x: float


@dataclass(frozen=True, eq=False)
class Trace:
    """Sampled time series on the fine grid. Arrays are read-only."""

    t: np.ndarray
    x_ref: np.ndarray
    x_ref_mod: np.ndarray
    x: np.ndarray
    dt: float
    t_sample: float
    meta: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in (self.t, self.x_ref, self.x_ref_mod, self.x)]
        lengths = {len(a) for a in arrays}
        if len(lengths) != 1:
            raise ValueError("trace columns must have equal length")
        for name, arr in zip(TRACE_COLUMNS, arrays):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        ratio = self.t_sample / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("t_sample must be an integer multiple of dt")
        t = arrays[0]
        if len(t) and t[0] < 0:
            raise ValueError("trace times must be non-negative")
        if len(t) > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ValueError("trace times must be strictly increasing")
            tol = 1e-12 * max(1.0, float(abs(t[-1])) / self.dt)
            if np.max(np.abs(steps - self.dt)) > tol * self.dt:
                raise ValueError("trace samples must be uniformly spaced by dt")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Sample]:
        for row in zip(self.t, self.x_ref, self.x_ref_mod, self.x):
            yield Sample(*(float(v) for v in row))

    @property
    def samples(self) -> List[Sample]:
        return list(self)

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.t_sample / self.dt))

    def window(self, t_start: float, t_end: Optional[float] = None) -> "Trace":
        """Sub-trace with t_start <= t (< t_end); times are kept absolute."""
        mask = self.t >= t_start - 1e-12
        if t_end is not None:
            mask &= self.t < t_end - 1e-12
        return Trace(self.t[mask], self.x_ref[mask], self.x_ref_mod[mask], self.x[mask],
                     dt=self.dt, t_sample=self.t_sample, meta=dict(self.meta))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: getattr(self, name) for name in TRACE_COLUMNS})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, dt: float, t_sample: float) -> "Trace":
        missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"trace frame is missing columns: {', '.join(missing)}")
        return cls(*(frame[c].to_numpy(dtype=float) for c in TRACE_COLUMNS), dt=dt, t_sample=t_sample)
