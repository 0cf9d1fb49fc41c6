"""
Fits the surrogate plant to a base-mode step response.

A coarse log-spaced grid over (kp, ki, tau_f) picks a starting point, then
coordinate descent with multiplicative steps refines it. The objective is the
sum of squared normalized residuals; a point is feasible when every residual
is within its tolerance (|r| <= 1).
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationInfo, field_validator

from .core import SpaaceError, Trace
from .metrics import StepMetrics, StepSpec, summarize
from .plant import PlantParams, UnstablePlantError, simulate_base_step

SEARCH_AXES = ("kp", "ki", "tau_f")


class CalibrationTargets(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    overshoot_pct: float = 37.36
    settling_time: float = 14.59e-3
    rise_time: float = 0.78e-3
    overshoot_tol_pts: float = 2.0
    settling_tol_rel: float = 0.2
    rise_tol_rel: float = 0.3

    @field_validator("overshoot_pct")
    @classmethod
    def _check_overshoot(cls, value: float) -> float:
        if not value >= 0:
            raise ValueError("overshoot_pct must be ≥ 0")
        return value

    @field_validator("settling_time", "rise_time", "overshoot_tol_pts", "settling_tol_rel", "rise_tol_rel")
    @classmethod
    def _check_positive(cls, value: float, info: ValidationInfo) -> float:
        if not value > 0:
            raise ValueError(f"{info.field_name} must be positive")
        return value


class SearchSpace(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kp: Tuple[float, float] = (2.0, 40.0)
    ki: Tuple[float, float] = (50.0, 1000.0)
    tau_f: Tuple[float, float] = (5e-4, 8e-3)
    tau_d: float = 2.8e-3
    grid_points: int = 5
    max_iter: int = 60
    initial_factor: float = 1.5
    min_factor: float = 1.01
    dt: float = 2e-5
    x_init: float = 0.3
    x_final: float = 0.7
    t_step: float = 2e-3
    t_end: float = 0.062
    band_pct: float = 5.0

    @field_validator("kp", "ki", "tau_f")
    @classmethod
    def _check_range(cls, value: Tuple[float, float], info: ValidationInfo) -> Tuple[float, float]:
        lo, hi = value
        if not 0 < lo <= hi:
            raise ValueError(f"{info.field_name} range must satisfy 0 < low <= high")
        return value

    @field_validator("grid_points")
    @classmethod
    def _check_grid(cls, value: int) -> int:
        if value < 2:
            raise ValueError("grid_points must be ≥ 2")
        return value

    @field_validator("initial_factor", "min_factor")
    @classmethod
    def _check_factor(cls, value: float, info: ValidationInfo) -> float:
        if not value > 1:
            raise ValueError(f"{info.field_name} must be > 1")
        return value


@dataclass
class CalibrationResult:
    params: PlantParams
    metrics: Optional[StepMetrics]
    residuals: Dict[str, float]
    score: float
    iterations: int
    evaluations: int = 0

    @property
    def worst_residual(self) -> float:
        return max((abs(r) for r in self.residuals.values()), default=math.inf)

    @property
    def feasible(self) -> bool:
        return self.worst_residual <= 1.0


class CalibrationError(SpaaceError):
    """No feasible point was found; ``best`` carries the closest one (if any was evaluated)."""

    def __init__(self, message: str, best: Optional[CalibrationResult] = None):
        self.best = best
        super().__init__(message)


def second_order_overshoot(zeta: float) -> float:
    """Percent overshoot of an ideal second-order step response with damping zeta < 1."""
    return 100.0 * math.exp(-math.pi * zeta / math.sqrt(1.0 - zeta * zeta))


def residuals(metrics: StepMetrics, targets: CalibrationTargets, horizon: float) -> Dict[str, float]:
    """Normalized residuals; an absent settling or rise time counts as ``horizon``."""
    settling = metrics.settling_time if metrics.settling_time is not None else horizon
    rise = metrics.rise_time if metrics.rise_time is not None else horizon
    return {
        "overshoot_pct": (metrics.overshoot_pct - targets.overshoot_pct) / targets.overshoot_tol_pts,
        "settling_time": (settling - targets.settling_time) / (targets.settling_tol_rel * targets.settling_time),
        "rise_time": (rise - targets.rise_time) / (targets.rise_tol_rel * targets.rise_time),
    }


def step_metrics(pp: PlantParams, space: SearchSpace) -> StepMetrics:
    t, x = simulate_base_step(pp, space.x_init, space.x_final, space.t_step, space.t_end)
    ref = np.where(t >= space.t_step, space.x_final, space.x_init)
    trace = Trace(t, ref, ref, x,
                  dt=pp.dt, t_sample=pp.dt)
    return summarize(trace, StepSpec(space.t_step, space.x_init, space.x_final), space.band_pct)


class _Objective:
    def __init__(self, targets: CalibrationTargets, space: SearchSpace):
        self.targets = targets
        self.space = space
        self.evaluations = 0

    def params(self, point: Dict[str, float]) -> PlantParams:
        return PlantParams(tau_d=self.space.tau_d, dt=self.space.dt, **point)

    def __call__(self, point: Dict[str, float]):
        self.evaluations += 1
        pp = self.params(point)
        try:
            metrics = step_metrics(pp, self.space)
        except UnstablePlantError:
            return math.inf, None, {}
        res = residuals(metrics, self.targets, self.space.t_end - self.space.t_step)
        score = sum(r * r for r in res.values())
        if not math.isfinite(score):
            return math.inf, None, {}
        return score, metrics, res


def _grid(lo: float, hi: float, points: int) -> np.ndarray:
    return np.geomspace(lo, hi, points)


def calibrate_report(targets: CalibrationTargets, search_space: Optional[SearchSpace] = None) -> CalibrationResult:
    """
    Runs the grid + coordinate-descent search and returns the best point found.

    Raises:
        CalibrationError: If the targets are self-contradictory or no feasible point exists.
    """
    space = search_space or SearchSpace()
    if targets.rise_time >= targets.settling_time:
        raise CalibrationError(
            f"targets are inconsistent: rise time {targets.rise_time * 1e3:g} ms is not shorter "
            f"than settling time {targets.settling_time * 1e3:g} ms")

    objective = _Objective(targets, space)
    grids = [_grid(*getattr(space, axis), space.grid_points) for axis in SEARCH_AXES]
    logging.info(f"Calibrating against OS={targets.overshoot_pct}%, ts={targets.settling_time * 1e3:g} ms, "
                 f"tr={targets.rise_time * 1e3:g} ms over a {space.grid_points}^3 grid")

    best_point, best_score, best_metrics, best_res = None, math.inf, None, {}
    for values in itertools.product(*grids):
        point = dict(zip(SEARCH_AXES, (float(v) for v in values)))
        score, metrics, res = objective(point)
        if score < best_score:
            best_point, best_score, best_metrics, best_res = point, score, metrics, res
    if best_point is None:
        raise CalibrationError("every grid point was unstable")
    logging.info(f"Grid start: {best_point} (score {best_score:.4g})")

    factor = space.initial_factor
    iterations = 0
    while factor > space.min_factor and iterations < space.max_iter:
        improved = False
        for axis in SEARCH_AXES:
            lo, hi = getattr(space, axis)
            for mult in (factor, 1.0 / factor):
                candidate = dict(best_point)
                candidate[axis] = min(hi, max(lo, best_point[axis] * mult))
                score, metrics, res = objective(candidate)
                if score < best_score:
                    best_point, best_score, best_metrics, best_res = candidate, score, metrics, res
                    improved = True
                    break
            if improved:
                break
        if not improved:
            factor = math.sqrt(factor)
        iterations += 1
        logging.debug(f"descent iter {iterations}: factor={factor:.4f} score={best_score:.4g} point={best_point}")

    result = CalibrationResult(params=objective.params(best_point), metrics=best_metrics,
                               residuals=best_res, score=best_score, iterations=iterations,
                               evaluations=objective.evaluations)
    if not result.feasible:
        raise CalibrationError(
            "no feasible plant found; best residuals "
            + ", ".join(f"{k}={v:+.3f}" for k, v in result.residuals.items()), best=result)
    logging.info(f"Calibration converged after {iterations} iterations "
                 f"({objective.evaluations} simulations); worst residual {result.worst_residual:.3f}")
    return result


def calibrate(targets: CalibrationTargets, search_space: Optional[SearchSpace] = None) -> PlantParams:
    return calibrate_report(targets, search_space).params
