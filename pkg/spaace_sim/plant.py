"""
Surrogate of a PI-controlled grid-following current loop.

State is (integrator z, converter voltage w, current i_d). The PI acts on
(u_ref - i_d); its output v = kp*(u_ref - i_d) + ki*z reaches the current
through an optional converter lag tau_d and the filter lag tau_f, scaled by
the grid-strength gain g(scr) = scr / (scr + k_grid):

    dz/dt   = u_ref - i_d
    dw/dt   = (v - w) / tau_d                      (w = v when tau_d == 0)
    tau_f * di_d/dt = g*w - i_d - d

A negative disturbance d models a voltage sag that drives the current up.
The linear part is discretized exactly (zero-order hold on u_ref and d) and
the current clamp is applied after each linear update; the integrator is
frozen on any step that clamps.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.linalg import expm

from .core import SpaaceError


class UnstablePlantError(SpaaceError):
    """The discretized closed loop has a spectral radius >= 1."""


class PlantParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kp: float = 16.6
    ki: float = 150.0
    tau_f: float = 2.0e-3
    tau_d: float = 2.8e-3
    scr: float = math.inf
    k_grid: float = 0.5
    dt: float = 2e-5
    i_limit: float = 1.5

    @field_validator("dt")
    @classmethod
    def _check_dt(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("dt must be positive")
        return value

    @field_validator("tau_f")
    @classmethod
    def _check_tau_f(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("tau_f must be positive")
        return value

    @field_validator("tau_d")
    @classmethod
    def _check_tau_d(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("tau_d must be ≥ 0")
        return value

    @field_validator("scr")
    @classmethod
    def _check_scr(cls, value: float) -> float:
        if not value >= 0.1:
            raise ValueError("scr must be ≥ 0.1")
        return value

    @field_validator("k_grid")
    @classmethod
    def _check_k_grid(cls, value: float) -> float:
        if not value >= 0 or math.isinf(value):
            raise ValueError("k_grid must be a finite value ≥ 0")
        return value

    @field_validator("kp")
    @classmethod
    def _check_kp(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("kp must be ≥ 0")
        return value

    @field_validator("ki")
    @classmethod
    def _check_ki(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("ki must be positive")
        return value

    @field_validator("i_limit")
    @classmethod
    def _check_i_limit(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("i_limit must be positive")
        return value

    @property
    def g(self) -> float:
        return grid_gain(self.scr, self.k_grid)


def grid_gain(scr: float, k_grid: float) -> float:
    """Loop-gain modifier g(scr) = scr / (scr + k_grid); 1.0 for an infinite bus."""
    if math.isinf(scr):
        return 1.0
    return scr / (scr + k_grid)


@dataclass(frozen=True)
class PlantState:
    integrator: float
    i_d: float
    t: float = 0.0
    # converter lag output; None for the lag-free loop
    v_conv: Optional[float] = None

    @classmethod
    def equilibrium(cls, pp: PlantParams, i_d: float, t: float = 0.0) -> "PlantState":
        """State at rest with i_d = u_ref and no disturbance."""
        g = pp.g
        v_conv = i_d / g if pp.tau_d > 0 else None
        return cls(integrator=i_d / (g * pp.ki), i_d=i_d, t=t, v_conv=v_conv)


def continuous_model(pp: PlantParams) -> Tuple[np.ndarray, np.ndarray]:
    """A, B of the linear part; state (z, w, i_d) or (z, i_d), inputs (u_ref, d)."""
    g, kp, ki, tf = pp.g, pp.kp, pp.ki, pp.tau_f
    if pp.tau_d > 0:
        td = pp.tau_d
        a = np.array([
            [0.0, 0.0, -1.0],
            [ki / td, -1.0 / td, -kp / td],
            [0.0, g / tf, -1.0 / tf],
        ])
        b = np.array([
            [1.0, 0.0],
            [kp / td, 0.0],
            [0.0, -1.0 / tf],
        ])
    else:
        a = np.array([
            [0.0, -1.0],
            [g * ki / tf, -(1.0 + g * kp) / tf],
        ])
        b = np.array([
            [1.0, 0.0],
            [g * kp / tf, -1.0 / tf],
        ])
    return a, b


@lru_cache(maxsize=256)
def discretize(pp: PlantParams) -> Tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization over one dt via the augmented matrix exponential."""
    a, b = continuous_model(pp)
    n, m = b.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    phi = expm(aug * pp.dt)
    ad, bd = phi[:n, :n], phi[:n, n:]
    ad.setflags(write=False)
    bd.setflags(write=False)
    return ad, bd


def spectral_radius(pp: PlantParams) -> float:
    ad, _ = discretize(pp)
    return float(np.max(np.abs(np.linalg.eigvals(ad))))


def dominant_damping(pp: PlantParams) -> float:
    """Damping ratio of the slowest-decaying oscillatory pole pair (1.0 if none oscillate)."""
    a, _ = continuous_model(pp)
    poles = np.linalg.eigvals(a)
    complex_poles = [p for p in poles if abs(p.imag) > 1e-9]
    if not complex_poles:
        return 1.0
    p = max(complex_poles, key=lambda q: q.real)
    return float(-p.real / abs(p))


class DiscretePlant:
    """Precomputed stepper for one PlantParams; raises UnstablePlantError on construction."""

    def __init__(self, pp: PlantParams):
        self.params = pp
        self.ad, self.bd = discretize(pp)
        radius = spectral_radius(pp)
        if radius >= 1.0:
            message = (f"closed loop is unstable: spectral radius {radius:.6f} >= 1 "
                       f"(kp={pp.kp}, ki={pp.ki}, tau_f={pp.tau_f}, tau_d={pp.tau_d}, g={pp.g:.4f})")
            logging.error(message)
            raise UnstablePlantError(message)
        self.has_lag = pp.tau_d > 0

    def to_vector(self, ps: PlantState) -> np.ndarray:
        if self.has_lag:
            v_conv = ps.v_conv if ps.v_conv is not None else ps.i_d / self.params.g
            return np.array([ps.integrator, v_conv, ps.i_d])
        return np.array([ps.integrator, ps.i_d])

    def from_vector(self, s: np.ndarray, t: float) -> PlantState:
        if self.has_lag:
            return PlantState(integrator=float(s[0]), i_d=float(s[2]), t=t, v_conv=float(s[1]))
        return PlantState(integrator=float(s[0]), i_d=float(s[1]), t=t)

    def advance(self, s: np.ndarray, u_ref: float, d: float) -> np.ndarray:
        """One dt on the state vector; clamps i_d and freezes the integrator when clamped."""
        nxt = self.ad @ s + self.bd @ np.array([u_ref, d])
        limit = self.params.i_limit
        if nxt[-1] > limit or nxt[-1] < -limit:
            nxt[-1] = limit if nxt[-1] > 0 else -limit
            nxt[0] = s[0]
        return nxt


def step(ps: PlantState, pp: PlantParams, u_ref: float, d: float = 0.0) -> PlantState:
    """
    Advances the plant by one dt with u_ref and d held constant.

    Args:
        ps (PlantState): Current state.
        pp (PlantParams): Plant parameters; must be stable.
        u_ref (float): Zero-order-held reference reaching the PI.
        d (float): Disturbance on the current path.

    Returns:
        PlantState: The state one dt later.
    """
    plant = _plant_for(pp)
    return plant.from_vector(plant.advance(plant.to_vector(ps), u_ref, d), ps.t + pp.dt)


@lru_cache(maxsize=64)
def _plant_for(pp: PlantParams) -> DiscretePlant:
    return DiscretePlant(pp)


class RefStep(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["ref_step"] = "ref_step"
    t_start: float
    new_ref: float

    @field_validator("t_start")
    @classmethod
    def _check_t_start(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("t_start must be ≥ 0")
        return value


class Fault(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["fault"] = "fault"
    t_start: float
    depth: float
    duration: float

    @field_validator("t_start")
    @classmethod
    def _check_t_start(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("t_start must be ≥ 0")
        return value

    @field_validator("duration")
    @classmethod
    def _check_duration(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("fault duration must be positive")
        return value

    @property
    def t_clear(self) -> float:
        return self.t_start + self.duration


Event = Annotated[Union[RefStep, Fault], Field(discriminator="kind")]

# Event times are compared with this slack so that t = k*dt lands on the event.
EVENT_TOL = 1e-12


def apply_event(ev: Event, t: float, current_ref: float) -> Tuple[float, float]:
    """
    Effect of one event at time t.

    Returns:
        Tuple[float, float]: (reference, disturbance). A RefStep replaces the
        reference from t_start on; a Fault contributes d = -depth on
        [t_start, t_start + duration).
    """
    if isinstance(ev, RefStep):
        ref = ev.new_ref if t >= ev.t_start - EVENT_TOL else current_ref
        return ref, 0.0
    active = ev.t_start - EVENT_TOL <= t < ev.t_clear - EVENT_TOL
    return current_ref, (-ev.depth if active else 0.0)


def simulate_base_step(pp: PlantParams, x_init: float, x_final: float, t_step: float,
                       t_end: float) -> Tuple[np.ndarray, np.ndarray]:
    """Unmodulated response to one reference step, starting from equilibrium at x_init."""
    plant = _plant_for(pp)
    steps = int(round(t_end / pp.dt))
    t = np.arange(steps + 1) * pp.dt
    x = np.empty(steps + 1)
    s = plant.to_vector(PlantState.equilibrium(pp, x_init))
    for k in range(steps + 1):
        x[k] = s[-1]
        u = x_final if t[k] >= t_step - EVENT_TOL else x_init
        s = plant.advance(s, u, 0.0)
    return t, x
