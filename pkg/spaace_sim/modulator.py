"""
Set-point modulation: SPAACE (linear-prediction correction) and SPAACE-M
(prediction plus a memory term over recent tracking errors).

modulate_step is called once per controller sampling instant. It reads the
state built from strictly earlier instants, computes the issued reference,
then appends the current measurement and error to the histories.
"""
from collections import deque
from typing import Deque, List, Optional

from .core import ControllerParams, Mode, PreconditionError, SpaaceError


class PredictionUnavailable(SpaaceError):
    """The measurement history does not yet reach back one prediction horizon."""


class ModulatorState:
    """Bounded histories of measurements and tracking errors, most recent last."""

    def __init__(self, params: ControllerParams):
        self.x_history: Deque[float] = deque(maxlen=max(params.n, params.j) + 1)
        self.e_history: Deque[float] = deque(maxlen=params.j + 1)
        self.n = params.n
        self.last_t: Optional[float] = None

    @property
    def initialized(self) -> bool:
        return len(self.x_history) >= self.n

    def resize(self, params: ControllerParams) -> None:
        """Re-bounds the histories for new n/j, keeping the most recent entries."""
        self.x_history = deque(self.x_history, maxlen=max(params.n, params.j) + 1)
        self.e_history = deque(self.e_history, maxlen=params.j + 1)
        self.n = params.n

    def __repr__(self) -> str:
        return (f"ModulatorState(x_history={list(self.x_history)}, "
                f"e_history={list(self.e_history)}, initialized={self.initialized})")


def tracking_error(x_ref: float, x: float) -> float:
    return x_ref - x


def predicted_error(x_ref: float, x_pred: float) -> float:
    return x_ref - x_pred


def _x_horizon_ago(state: ModulatorState, params: ControllerParams) -> float:
    if len(state.x_history) < params.n:
        raise PredictionUnavailable(
            f"need {params.n} past samples for prediction, have {len(state.x_history)}")
    return state.x_history[-params.n]


def rate_of_change(state: ModulatorState, params: ControllerParams, x_now: float) -> float:
    """
    Slope of the measurement over the last prediction horizon.

    Args:
        state (ModulatorState): History of earlier sampling instants.
        params (ControllerParams): Supplies n and t_sample (T_pred = n * t_sample).
        x_now (float): Measurement at the current instant.

    Returns:
        float: (x(t_k) - x(t_k - T_pred)) / T_pred in per-unit per second.
    """
    return (x_now - _x_horizon_ago(state, params)) / params.t_pred


def predict(state: ModulatorState, params: ControllerParams, x_now: float) -> float:
    """Linear extrapolation one horizon ahead: 2*x(t_k) - x(t_k - T_pred)."""
    x_old = _x_horizon_ago(state, params)
    return x_now + (x_now - x_old)


def past_error_average(state: ModulatorState, params: ControllerParams,
                       e_now: Optional[float] = None) -> float:
    """
    Memory term over the j most recent errors.

    With strict_eq7 the window is the current error plus j earlier ones (j + 1
    terms) divided by j; otherwise it is the plain mean of the j newest terms.
    When e_now is None the newest entry of e_history plays the current error.
    Returns 0.0 while the history is too short.
    """
    errors: List[float] = list(state.e_history)
    if e_now is not None:
        errors = errors + [e_now]
    terms = params.j + 1 if params.strict_eq7 else params.j
    if len(errors) < terms:
        return 0.0
    return sum(errors[-terms:]) / params.j


def _clamp(value: float, bound: float) -> float:
    return max(-bound, min(bound, value))


def modulate_step(state: ModulatorState, params: ControllerParams, x_ref: float, x: float,
                  t: Optional[float] = None) -> float:
    """
    Issues the reference for one sampling instant and records (x, e) into state.

    Args:
        state (ModulatorState): Mutated in place.
        params (ControllerParams): Mode and gains.
        x_ref (float): Unmodified reference at this instant.
        x (float): Measurement at this instant.
        t (float): Optional sampling time; successive calls must be strictly increasing.

    Returns:
        float: The modulated reference x'_ref.
    """
    if t is not None:
        if state.last_t is not None and t <= state.last_t:
            raise PreconditionError(f"sampling time went from {state.last_t} to {t}; calls must be monotone")
        state.last_t = t

    e = tracking_error(x_ref, x)
    out = x_ref
    if params.mode is not Mode.BASE and abs(e) > params.epsilon and state.initialized:
        x_pred = predict(state, params, x)
        modulated = x_ref + params.m1 * predicted_error(x_ref, x_pred)
        if params.mode is Mode.SPAACE_M:
            modulated += params.m2 * past_error_average(state, params, e_now=e)
        out = _clamp(modulated, params.saturation)

    state.x_history.append(x)
    state.e_history.append(e)
    return out


def reset(state: ModulatorState) -> ModulatorState:
    state.x_history.clear()
    state.e_history.clear()
    state.last_t = None
    return state


class Modulator:
    """Params plus state; the unit owned by one simulation run or one cosim session."""

    def __init__(self, params: ControllerParams):
        self.params = params
        self.state = ModulatorState(params)

    def step(self, x_ref: float, x: float, t: Optional[float] = None) -> float:
        return modulate_step(self.state, self.params, x_ref, x, t)

    def reset(self) -> None:
        reset(self.state)

    def update_params(self, params: ControllerParams) -> None:
        self.params = params
        self.state.resize(params)
