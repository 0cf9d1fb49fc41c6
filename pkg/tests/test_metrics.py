import math

import numpy as np
import pytest

from spaace_sim.core import PreconditionError
from spaace_sim.metrics import (StepSpec, overshoot, post_fault_undershoot, rise_time, settling_time, summarize,
                                summarize_fault)
from spaace_sim.scenario import evaluate, get_case, run

DT = 1e-6
TAU = 1e-3


@pytest.fixture
def first_order(trace_of):
    t = np.arange(20001) * DT
    return trace_of(t, 1.0 - np.exp(-t / TAU), x_ref=np.ones_like(t), dt=DT)


class TestAnalyticFirstOrder:
    def test_settling_time_is_tau_ln_20(self, first_order):
        ts = settling_time(first_order, StepSpec(0.0, 0.0, 1.0), band_pct=5.0)
        assert abs(ts - TAU * math.log(20.0)) <= DT

    def test_rise_time_is_tau_ln_9(self, first_order):
        tr = rise_time(first_order, StepSpec(0.0, 0.0, 1.0))
        assert abs(tr - TAU * math.log(9.0)) <= DT

    def test_no_overshoot(self, first_order):
        assert overshoot(first_order, StepSpec(0.0, 0.0, 1.0)) == 0.0

    def test_shifted_and_scaled_copy_gives_same_figures(self, trace_of, first_order):
        t0 = 5e-3
        t = np.arange(25001) * DT
        x = np.where(t < t0, 0.3, 0.3 + 0.4 * (1.0 - np.exp(-(t - t0) / TAU)))
        moved = trace_of(t, x, dt=DT)
        base = summarize(first_order, StepSpec(0.0, 0.0, 1.0))
        shifted = summarize(moved, StepSpec(t0, 0.3, 0.7))
        assert shifted.settling_time == pytest.approx(base.settling_time, abs=2 * DT)
        assert shifted.rise_time == pytest.approx(base.rise_time, abs=2 * DT)
        assert shifted.overshoot_pct == pytest.approx(base.overshoot_pct, abs=1e-9)


class TestOvershoot:
    def test_unit_step_peak(self, trace_of):
        t = np.arange(6) * 1e-3
        trace = trace_of(t, [0.0, 0.5, 1.2, 1.0, 1.0, 1.0])
        assert overshoot(trace, StepSpec(0.0, 0.0, 1.0)) == pytest.approx(20.0)

    def test_relative_to_step_magnitude(self, trace_of):
        t = np.arange(6) * 1e-3
        trace = trace_of(t, [0.3, 0.6, 0.84944, 0.7, 0.7, 0.7])
        assert overshoot(trace, StepSpec(0.0, 0.3, 0.7)) == pytest.approx(37.36, abs=1e-9)

    def test_falling_step_reports_trough(self, trace_of):
        t = np.arange(6) * 1e-3
        trace = trace_of(t, [1.0, 0.5, 0.1, 0.3, 0.3, 0.3])
        step = StepSpec(0.0, 1.0, 0.3)
        assert overshoot(trace, step) == pytest.approx(100.0 * 0.2 / 0.7)
        m = summarize(trace, step)
        assert m.undershoot_pct == pytest.approx(100.0 * 0.2 / 0.7)
        assert m.overshoot_pct == 0.0
        assert m.peak_excursion_pct == m.undershoot_pct
        assert m.direction == -1

    def test_samples_before_event_are_ignored(self, trace_of):
        t = np.arange(6) * 1e-3
        trace = trace_of(t, [5.0, 0.0, 0.5, 1.1, 1.0, 1.0])
        assert overshoot(trace, StepSpec(1e-3, 0.0, 1.0)) == pytest.approx(10.0)

    def test_wrong_way_excursion_is_undershoot(self, trace_of):
        t = np.arange(6) * 1e-3
        trace = trace_of(t, [0.3, 0.26, 0.5, 0.7, 0.7, 0.7])
        m = summarize(trace, StepSpec(0.0, 0.3, 0.7))
        assert m.undershoot_pct == pytest.approx(10.0)


class TestSentinels:
    def test_never_settles(self, trace_of):
        t = np.arange(100) * 1e-4
        x = 1.0 + 0.2 * np.cos(2 * np.pi * 1e3 * t)
        trace = trace_of(t, x)
        assert settling_time(trace, StepSpec(0.0, 0.0, 1.0)) is None

    def test_never_reaches_ninety_percent(self, trace_of):
        t = np.arange(100) * 1e-4
        trace = trace_of(t, np.linspace(0.0, 0.5, 100))
        assert rise_time(trace, StepSpec(0.0, 0.0, 1.0)) is None

    def test_always_inside_band(self, trace_of):
        t = np.arange(10) * 1e-4
        trace = trace_of(t, np.full(10, 0.7))
        step = StepSpec(0.0, 0.3, 0.7)
        assert settling_time(trace, step) == 0.0
        assert rise_time(trace, step) == 0.0

    def test_summary_exposes_milliseconds(self, first_order):
        m = summarize(first_order, StepSpec(0.0, 0.0, 1.0))
        assert m.settling_ms == pytest.approx(TAU * math.log(20.0) * 1e3, abs=1e-3)
        assert m.rise_ms == pytest.approx(TAU * math.log(9.0) * 1e3, abs=1e-3)


class TestPreconditions:
    def test_degenerate_step(self, first_order):
        with pytest.raises(PreconditionError, match="degenerate"):
            summarize(first_order, StepSpec(0.0, 0.5, 0.5))

    def test_event_after_trace_end(self, first_order):
        with pytest.raises(PreconditionError):
            overshoot(first_order, StepSpec(1.0, 0.0, 1.0))

    def test_fault_reference_must_be_non_zero(self, first_order):
        with pytest.raises(PreconditionError):
            post_fault_undershoot(first_order, 0.0, 0.0)


class TestFaultRecovery:
    def test_post_fault_undershoot(self, trace_of):
        t = np.arange(8) * 1e-3
        x = [1.0, 1.0, 1.3, 1.4, 0.85, 0.95, 1.0, 1.0]
        trace = trace_of(t, x, x_ref=np.ones(8))
        assert post_fault_undershoot(trace, 3e-3, 1.0) == pytest.approx(15.0)
        m = summarize_fault(trace, 2e-3, 3e-3, 1.0)
        assert m.undershoot_pct == pytest.approx(15.0)
        assert m.overshoot_pct == pytest.approx(40.0)
        assert m.rise_time is None
        assert m.direction == 0

    def test_fault_must_clear_after_start(self, first_order):
        with pytest.raises(PreconditionError):
            summarize_fault(first_order, 2e-3, 1e-3, 1.0)


class TestGridRefinement:
    @pytest.mark.parametrize("mode", ["base", "spaace_m"])
    def test_halving_plant_step_moves_metrics_by_at_most_one_step(self, mode):
        coarse = get_case("case1_1").with_mode(mode)
        fine = coarse.with_overrides(plant={"dt": coarse.plant.dt / 2})
        a, b = (evaluate(s, run(s)) for s in (coarse, fine))
        dt = coarse.plant.dt
        assert abs(a.settling_time - b.settling_time) <= dt
        assert abs(a.rise_time - b.rise_time) <= dt
        assert a.overshoot_pct == pytest.approx(b.overshoot_pct, abs=0.1)
        assert a.undershoot_pct == pytest.approx(b.undershoot_pct, abs=0.1)
