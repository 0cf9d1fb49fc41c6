"""
Dual-rate closed-loop runner and the built-in case matrix.

The plant advances every dt; the modulator acts at t = 0 and every t_sample
after that, and its output is held until the next sampling instant. Before
t = 0 the loop runs a silent warm-up at the initial reference (pre_hold) so
the modulator histories start full and at rest. Only t >= 0 is recorded.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import MAX_WORKERS
from .core import (ConfigError, ControllerParams, Mode, PreconditionError, SpaaceError, Trace,
                   build_params)
from .metrics import StepMetrics, StepSpec, summarize, summarize_fault
from .modulator import Modulator
from .plant import EVENT_TOL, DiscretePlant, Event, Fault, PlantParams, PlantState, RefStep


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "custom"
    plant: PlantParams = Field(default_factory=PlantParams)
    controller: ControllerParams = Field(default_factory=ControllerParams)
    events: List[Event] = Field(default_factory=list)
    t_end: float = 0.06
    initial_ref: float = 0.3
    pre_hold: float = 0.02
    band_pct: float = 5.0
    seed: int = 0

    @field_validator("events")
    @classmethod
    def _sort_events(cls, value: List[Event]) -> List[Event]:
        return sorted(value, key=lambda ev: ev.t_start)

    @field_validator("pre_hold")
    @classmethod
    def _check_pre_hold(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("pre_hold must be ≥ 0")
        return value

    @field_validator("band_pct")
    @classmethod
    def _check_band(cls, value: float) -> float:
        if not 0 < value < 100:
            raise ValueError("band_pct must be in (0, 100)")
        return value

    @model_validator(mode="after")
    def _check_timing(self) -> "Scenario":
        dt, t_sample = self.plant.dt, self.controller.t_sample
        if dt > t_sample * (1 + 1e-9):
            raise ValueError("plant dt must not exceed t_sample")
        ratio = t_sample / dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("t_sample must be an integer multiple of plant dt")
        if self.events and not self.t_end > max(ev.t_start for ev in self.events):
            raise ValueError("t_end must be after the last event start")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        faults = [ev for ev in self.events if isinstance(ev, Fault)]
        for first, second in zip(faults, faults[1:]):
            if second.t_start < first.t_clear - EVENT_TOL:
                raise ValueError(f"faults at {first.t_start} s and {second.t_start} s overlap")
        return self

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.controller.t_sample / self.plant.dt))

    def with_mode(self, mode: Union[Mode, str]) -> "Scenario":
        return self.with_overrides(controller={"mode": Mode.parse(mode)})

    def with_overrides(self, controller: Optional[dict] = None, plant: Optional[dict] = None,
                       **fields) -> "Scenario":
        """Validated copy with controller/plant fields and top-level fields replaced."""
        data = self.model_dump()
        data["controller"].update(controller or {})
        data["plant"].update(plant or {})
        data.update(fields)
        return build_params(Scenario, data)

    def step_spec(self) -> Optional[StepSpec]:
        """The first reference step as (t0, x_init, x_final), if the scenario has one."""
        ref = self.initial_ref
        for ev in self.events:
            if isinstance(ev, RefStep):
                if ev.new_ref != ref:
                    return StepSpec(ev.t_start, ref, ev.new_ref)
                ref = ev.new_ref
        return None

    def first_fault(self) -> Optional[Fault]:
        return next((ev for ev in self.events if isinstance(ev, Fault)), None)


@dataclass(frozen=True)
class ComparisonRow:
    case: str
    mode: Mode
    metrics: Optional[StepMetrics] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _event_profiles(s: Scenario, t: np.ndarray):
    ref = np.full(t.shape, s.initial_ref)
    d = np.zeros(t.shape)
    for ev in s.events:
        if isinstance(ev, RefStep):
            ref[t >= ev.t_start - EVENT_TOL] = ev.new_ref
        else:
            active = (t >= ev.t_start - EVENT_TOL) & (t < ev.t_clear - EVENT_TOL)
            d[active] -= ev.depth
    return ref, d


class SetPointSource(Protocol):
    def step(self, x_ref: float, x: float, t: Optional[float] = None) -> float: ...


def run(s: Scenario, controller: Optional[SetPointSource] = None) -> Trace:
    """
    Simulates one scenario.

    Args:
        s (Scenario): Validated scenario.
        controller (SetPointSource): Replaces the in-process modulator, e.g. a
            cosim client talking to a remote one. It must be fresh or reset.

    Returns:
        Trace: One sample per fine step from t = 0 to t_end inclusive.
    """
    plant = DiscretePlant(s.plant)
    dt = s.plant.dt
    per = s.steps_per_sample
    steps = int(round(s.t_end / dt))
    modulator = controller if controller is not None else Modulator(s.controller)
    logging.info(f"Running scenario '{s.name}' (mode={s.controller.mode.value}, "
                 f"t_sample={s.controller.t_sample}, n={s.controller.n}, steps={steps})")

    state = plant.to_vector(PlantState.equilibrium(s.plant, s.initial_ref))
    warm = math.ceil(s.pre_hold / s.controller.t_sample - 1e-9)
    u = s.initial_ref
    for w in range(warm):
        u = modulator.step(s.initial_ref, float(state[-1]), t=(w - warm) * s.controller.t_sample)
        for _ in range(per):
            state = plant.advance(state, u, 0.0)

    t = np.arange(steps + 1) * dt
    ref, d = _event_profiles(s, t)
    x_rec = np.empty(steps + 1)
    u_rec = np.empty(steps + 1)
    for k in range(steps + 1):
        x = float(state[-1])
        if k % per == 0:
            u = modulator.step(float(ref[k]), x, t=float(t[k]))
        x_rec[k] = x
        u_rec[k] = u
        state = plant.advance(state, u, float(d[k]))

    return Trace(t, ref, u_rec, x_rec, dt=dt, t_sample=s.controller.t_sample,
                 meta={"case": s.name, "mode": s.controller.mode.value})


def evaluate(s: Scenario, trace: Trace) -> StepMetrics:
    """Step metrics for step scenarios, recovery metrics for fault scenarios."""
    fault = s.first_fault()
    if fault is not None:
        ref_at_fault = float(np.interp(fault.t_start, trace.t, trace.x_ref))
        return summarize_fault(trace, fault.t_start, fault.t_clear, ref_at_fault, s.band_pct)
    spec = s.step_spec()
    if spec is None:
        raise PreconditionError(f"scenario '{s.name}' has neither a reference step nor a fault")
    return summarize(trace, spec, s.band_pct)


def _run_row(s: Scenario, label: str) -> ComparisonRow:
    try:
        return ComparisonRow(label, s.controller.mode, evaluate(s, run(s)))
    except (SpaaceError, ValueError) as e:
        logging.error(f"Run '{label}' in mode {s.controller.mode.value} failed: {e}")
        return ComparisonRow(label, s.controller.mode, error=str(e))


def _map_ordered(fn: Callable, items: Sequence, max_workers: Optional[int]):
    workers = max_workers or MAX_WORKERS
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


ALL_MODES = [Mode.BASE, Mode.SPAACE, Mode.SPAACE_M]


def compare(case: Union[str, Scenario], modes: Optional[Sequence[Union[Mode, str]]] = None,
            max_workers: Optional[int] = None) -> List[ComparisonRow]:
    """
    Runs one scenario under each mode; rows come back in the order of ``modes``.

    A failing run becomes a row with ``error`` set; the other rows still run.
    """
    s = get_case(case) if isinstance(case, str) else case
    parsed = [Mode.parse(m) for m in (ALL_MODES if modes is None else modes)]
    if not parsed:
        raise PreconditionError("compare needs at least one mode")
    jobs = []
    for mode in parsed:
        try:
            jobs.append((s.with_mode(mode), None))
        except ConfigError as e:
            jobs.append((None, ComparisonRow(s.name, mode, error=str(e))))
    return _map_ordered(lambda job: job[1] or _run_row(job[0], s.name), jobs, max_workers)


SWEEP_AXES = ("t_sample", "scr", "m1", "m2")


def _swept(s: Scenario, axis: str, value: float) -> Scenario:
    if axis == "scr":
        return s.with_overrides(plant={"scr": value})
    if axis == "t_sample":
        # keep the prediction horizon as close to the case's T_pred as an integer n allows
        n = max(1, int(round(s.controller.t_pred / value))) if value > 0 else s.controller.n
        return s.with_overrides(controller={"t_sample": value, "n": n})
    return s.with_overrides(controller={axis: value})


def sweep(case: Union[str, Scenario], axis: str, values: Sequence[float],
          modes: Optional[Sequence[Union[Mode, str]]] = None,
          max_workers: Optional[int] = None) -> List[ComparisonRow]:
    """
    One comparison per value of ``axis``, in the order the values are given.

    Rows are labelled ``<case>[<axis>=<value>]``. An invalid value yields one
    error row per requested mode instead of aborting the sweep.
    """
    if axis not in SWEEP_AXES:
        raise PreconditionError(f"unknown sweep axis '{axis}' (expected one of: {', '.join(SWEEP_AXES)})")
    if not values:
        raise PreconditionError("sweep needs at least one value")
    s = get_case(case) if isinstance(case, str) else case
    parsed = [Mode.parse(m) for m in (ALL_MODES if modes is None else modes)]

    jobs = []
    for value in values:
        label = f"{s.name}[{axis}={value:g}]"
        try:
            swept = _swept(s, axis, value)
        except ConfigError as e:
            logging.warning(f"Sweep value {axis}={value} rejected: {e}")
            jobs.extend((None, ComparisonRow(label, mode, error=str(e))) for mode in parsed)
            continue
        for mode in parsed:
            jobs.append(((swept.with_mode(mode), label), None))
    return _map_ordered(lambda job: job[1] or _run_row(*job[0]), jobs, max_workers)


# Built-in cases.
CASE_M1 = 0.15
CASE_M2 = -0.45
FAST_SAMPLE = 2e-4
SLOW_SAMPLE = 3e-3


def _controller(t_sample: float, n: int) -> ControllerParams:
    return ControllerParams(mode=Mode.SPAACE_M, m1=CASE_M1, m2=CASE_M2, n=n, t_sample=t_sample,
                            epsilon=0.05, j=2)


def _step_case(name: str, t_sample: float, n: int) -> Scenario:
    return Scenario(name=name, controller=_controller(t_sample, n), initial_ref=0.3,
                    events=[RefStep(t_start=2e-3, new_ref=0.7)], t_end=0.06)


def _fault_case(name: str, t_sample: float, n: int) -> Scenario:
    return Scenario(name=name, controller=_controller(t_sample, n), initial_ref=1.0,
                    events=[Fault(t_start=5e-3, depth=1.0, duration=0.03)], t_end=0.085)


def _scr_case(name: str, scr: float) -> Scenario:
    return Scenario(name=name, plant=PlantParams(scr=scr), controller=_controller(FAST_SAMPLE, 4),
                    initial_ref=1.0, events=[RefStep(t_start=2e-3, new_ref=0.3)], t_end=0.08)


CASES: Dict[str, Callable[[], Scenario]] = {
    "case1_1": lambda: _step_case("case1_1", FAST_SAMPLE, 4),
    "case1_2": lambda: _step_case("case1_2", SLOW_SAMPLE, 1),
    "case2_fast": lambda: _fault_case("case2_fast", FAST_SAMPLE, 4),
    "case2_slow": lambda: _fault_case("case2_slow", SLOW_SAMPLE, 1),
    "case3_1": lambda: _scr_case("case3_1", 5.0),
    "case3_2": lambda: _scr_case("case3_2", 1.0),
}

CASE_ALIASES = {"case1": "case1_1", "case2": "case2_fast", "case3": "case3_1"}


def get_case(name: str) -> Scenario:
    key = CASE_ALIASES.get(name, name)
    if key not in CASES:
        known = ", ".join(sorted(CASES) + sorted(CASE_ALIASES))
        raise ConfigError([f"unknown case '{name}' (known: {known})"])
    return CASES[key]()
