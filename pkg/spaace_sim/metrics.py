"""
Transient figures of merit for step and fault-recovery traces.

Percentages are relative to the step magnitude |x_final - x_init|; times are
measured from the event time t0. Threshold crossings are located by linear
interpolation between samples. Absent values (never settled, never crossed)
are reported as None.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import PreconditionError, Trace


class StepSpec(NamedTuple):
    t0: float
    x_init: float
    x_final: float

    @property
    def delta(self) -> float:
        return self.x_final - self.x_init

    @property
    def direction(self) -> int:
        return 1 if self.delta > 0 else -1


@dataclass(frozen=True)
class StepMetrics:
    overshoot_pct: float
    undershoot_pct: float
    settling_time: Optional[float]
    rise_time: Optional[float]
    peak_value: float
    trough_value: float
    # 1 rising step, -1 falling step, 0 fault recovery
    direction: int = 1

    @property
    def settling_ms(self) -> Optional[float]:
        return None if self.settling_time is None else self.settling_time * 1e3

    @property
    def rise_ms(self) -> Optional[float]:
        return None if self.rise_time is None else self.rise_time * 1e3

    @property
    def peak_excursion_pct(self) -> float:
        """The excursion beyond the final value: overshoot when rising, undershoot otherwise."""
        return self.overshoot_pct if self.direction > 0 else self.undershoot_pct


def _window(trace: Trace, t0: float):
    mask = trace.t >= t0 - 1e-12
    if not np.any(mask):
        raise PreconditionError(f"trace ends before t0={t0}")
    return trace.t[mask], trace.x[mask]


def _check_step(step: StepSpec) -> None:
    if step.x_final == step.x_init:
        raise PreconditionError("degenerate step: x_final equals x_init")


def overshoot(trace: Trace, step: StepSpec) -> float:
    """
    Peak excursion beyond x_final in the direction of the step, in percent.

    A rising step reports the peak above x_final (overshoot); a falling step
    reports the trough below x_final (undershoot).
    """
    _check_step(step)
    _, x = _window(trace, step.t0)
    if step.direction > 0:
        excess = float(np.max(x)) - step.x_final
    else:
        excess = step.x_final - float(np.min(x))
    return 100.0 * max(0.0, excess) / abs(step.delta)


def _wrong_way_pct(x: np.ndarray, step: StepSpec) -> float:
    if step.direction > 0:
        excess = step.x_init - float(np.min(x))
    else:
        excess = float(np.max(x)) - step.x_init
    return 100.0 * max(0.0, excess) / abs(step.delta)


def _settling(t: np.ndarray, x: np.ndarray, x_final: float, tol: float, t0: float) -> Optional[float]:
    outside = np.flatnonzero(np.abs(x - x_final) > tol)
    if outside.size == 0:
        return 0.0
    last = int(outside[-1])
    if last == len(x) - 1:
        return None
    a = abs(x[last] - x_final)
    b = abs(x[last + 1] - x_final)
    frac = (a - tol) / (a - b) if a != b else 1.0
    t_in = t[last] + (t[last + 1] - t[last]) * frac
    return max(0.0, float(t_in) - t0)


def settling_time(trace: Trace, step: StepSpec, band_pct: float = 5.0) -> Optional[float]:
    """
    Time from t0 after which x stays within band_pct% of |delta| around x_final.

    Args:
        trace (Trace): Simulated trace.
        step (StepSpec): Event time and the step endpoints.
        band_pct (float): Band half-width as a percentage of the step magnitude.

    Returns:
        Optional[float]: Seconds, or None if the trace never settles.
    """
    _check_step(step)
    t, x = _window(trace, step.t0)
    return _settling(t, x, step.x_final, band_pct / 100.0 * abs(step.delta), step.t0)


def _first_crossing(t: np.ndarray, x: np.ndarray, level: float, sign: int) -> Optional[float]:
    hits = np.flatnonzero(sign * (x - level) >= 0)
    if hits.size == 0:
        return None
    k = int(hits[0])
    if k == 0:
        return float(t[0])
    x0, x1 = x[k - 1], x[k]
    return float(t[k - 1] + (t[k] - t[k - 1]) * (level - x0) / (x1 - x0))


def rise_time(trace: Trace, step: StepSpec) -> Optional[float]:
    """10% to 90% crossing interval of the step, or None if either level is never reached."""
    _check_step(step)
    t, x = _window(trace, step.t0)
    sign = step.direction
    t_lo = _first_crossing(t, x, step.x_init + 0.1 * step.delta, sign)
    t_hi = _first_crossing(t, x, step.x_init + 0.9 * step.delta, sign)
    if t_lo is None or t_hi is None:
        return None
    return max(0.0, t_hi - t_lo)


def summarize(trace: Trace, step: StepSpec, band_pct: float = 5.0) -> StepMetrics:
    _check_step(step)
    _, x = _window(trace, step.t0)
    excursion = overshoot(trace, step)
    wrong_way = _wrong_way_pct(x, step)
    return StepMetrics(
        overshoot_pct=excursion if step.direction > 0 else wrong_way,
        undershoot_pct=wrong_way if step.direction > 0 else excursion,
        settling_time=settling_time(trace, step, band_pct),
        rise_time=rise_time(trace, step),
        peak_value=float(np.max(x)),
        trough_value=float(np.min(x)),
        direction=step.direction,
    )


def post_fault_undershoot(trace: Trace, t_clear: float, ref: float) -> float:
    """Largest dip below ref after the fault clears, as a percentage of |ref|."""
    if ref == 0:
        raise PreconditionError("post-fault undershoot needs a non-zero pre-fault reference")
    _, x = _window(trace, t_clear)
    return 100.0 * max(0.0, ref - float(np.min(x))) / abs(ref)


def summarize_fault(trace: Trace, t_fault: float, t_clear: float, ref: float,
                    band_pct: float = 5.0) -> StepMetrics:
    """
    Recovery metrics for a fault on a constant reference.

    overshoot_pct is the peak above ref while the fault is applied, undershoot_pct
    the dip below ref after clearing (both relative to |ref|). settling_time is
    measured from clearing, with the band relative to |ref|. rise_time is absent.
    """
    if not t_clear > t_fault:
        raise PreconditionError("fault must clear after it starts")
    _, x_all = _window(trace, t_fault)
    t_after, x_after = _window(trace, t_clear)
    undershoot = post_fault_undershoot(trace, t_clear, ref)
    peak = float(np.max(x_all))
    return StepMetrics(
        overshoot_pct=100.0 * max(0.0, peak - ref) / abs(ref),
        undershoot_pct=undershoot,
        settling_time=_settling(t_after, x_after, ref, band_pct / 100.0 * abs(ref), t_clear),
        rise_time=None,
        peak_value=peak,
        trough_value=float(np.min(x_all)),
        direction=0,
    )
