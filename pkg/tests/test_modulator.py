from typing import List

import numpy as np
import pytest

from spaace_sim.core import ControllerParams, Mode, PreconditionError
from spaace_sim.modulator import (Modulator, ModulatorState, PredictionUnavailable, modulate_step,
                                  past_error_average, predict, predicted_error, rate_of_change, reset,
                                  tracking_error)


def _state(params: ControllerParams, xs=(), es=()) -> ModulatorState:
    state = ModulatorState(params)
    state.x_history.extend(xs)
    state.e_history.extend(es)
    return state


def _drive(params: ControllerParams, refs, xs) -> List[float]:
    modulator = Modulator(params)
    return [modulator.step(float(r), float(x)) for r, x in zip(refs, xs)]


def _random_trace(rng: np.random.Generator, steps: int):
    levels = rng.uniform(-1.0, 1.0, size=steps // 25 + 1)
    refs = np.repeat(levels, 25)[:steps]
    xs = np.cumsum(rng.normal(scale=0.03, size=steps)) + rng.uniform(-0.5, 0.5)
    return refs, xs


def _oracle(params: ControllerParams, refs, xs) -> List[float]:
    """Per-sample transcription of the SPAACE / SPAACE-M loop using plain lists."""
    x_past: List[float] = []
    e_past_list: List[float] = []
    out = []
    t_pred = params.n * params.t_sample
    for x_ref, x in zip(refs, xs):
        e = x_ref - x
        issued = x_ref
        if params.mode != Mode.BASE and abs(e) > params.epsilon and len(x_past) >= params.n:
            r = (x - x_past[len(x_past) - params.n]) / t_pred
            x_pred = x + r * t_pred
            issued = x_ref + params.m1 * (x_ref - x_pred)
            if params.mode == Mode.SPAACE_M:
                newest_first = [e] + e_past_list[::-1]
                width = params.j + 1 if params.strict_eq7 else params.j
                memory = sum(newest_first[:width]) / params.j if len(newest_first) >= width else 0.0
                issued += params.m2 * memory
            issued = min(params.saturation, max(-params.saturation, issued))
        x_past.append(x)
        e_past_list.append(e)
        out.append(issued)
    return out


class TestErrors:
    @pytest.mark.parametrize("x_ref, x, expected", [(0.7, 0.3, 0.4), (0.3, 0.3, 0.0), (0.3, 0.41, -0.11)])
    def test_tracking_error(self, x_ref, x, expected):
        assert tracking_error(x_ref, x) == pytest.approx(expected)

    @pytest.mark.parametrize("x_ref, x_pred, expected", [(0.7, 0.7, 0.0), (0.3, 0.67, -0.37), (0.7, 0.5, 0.2)])
    def test_predicted_error(self, x_ref, x_pred, expected):
        assert predicted_error(x_ref, x_pred) == pytest.approx(expected)


class TestPrediction:
    params = ControllerParams(n=4, t_sample=2e-4)

    def test_rate_of_change(self):
        state = _state(self.params, xs=[0.3, 0.35, 0.4, 0.45])
        assert rate_of_change(state, self.params, 0.5) == pytest.approx(250.0)

    def test_rate_of_change_flat(self):
        state = _state(self.params, xs=[0.3] * 4)
        assert rate_of_change(state, self.params, 0.3) == 0.0

    def test_rate_of_change_ramp(self):
        t = np.arange(5) * self.params.t_sample
        x = 0.1 + 100.0 * t
        state = _state(self.params, xs=x[:4])
        assert rate_of_change(state, self.params, x[4]) == pytest.approx(100.0, rel=1e-9)

    def test_predict(self):
        state = _state(self.params, xs=[0.3, 0.0, 0.0, 0.0])
        assert predict(state, self.params, 0.5) == pytest.approx(0.7)

    def test_predict_identity(self):
        state = _state(self.params, xs=[0.4, 0.9, 0.9, 0.9])
        assert predict(state, self.params, 0.6) == pytest.approx(0.8)

    def test_predict_constant(self):
        state = _state(self.params, xs=[0.3] * 4)
        assert predict(state, self.params, 0.3) == 0.3

    def test_prediction_unavailable_on_short_history(self):
        state = _state(self.params, xs=[0.3, 0.3])
        with pytest.raises(PredictionUnavailable):
            predict(state, self.params, 0.3)

    def test_affine_signal_is_predicted_exactly(self):
        params = ControllerParams(n=3, t_sample=1e-3)
        t = np.arange(10) * params.t_sample
        x = -0.2 + 37.5 * t
        state = _state(params, xs=x[:6])
        expected = -0.2 + 37.5 * (t[6] + params.t_pred)
        assert predict(state, params, x[6]) == pytest.approx(expected, abs=1e-12)


class TestPastErrorAverage:
    def test_literal_window(self):
        params = ControllerParams(j=2)
        state = _state(params, es=[0.3, 0.2, 0.1])
        assert past_error_average(state, params) == pytest.approx(0.3)

    def test_zero_history(self):
        params = ControllerParams(j=2)
        assert past_error_average(_state(params, es=[0.0, 0.0, 0.0]), params) == 0.0

    def test_divisor_one(self):
        params = ControllerParams(j=1)
        assert past_error_average(_state(params, es=[0.2, 0.4]), params) == pytest.approx(0.6)

    def test_current_error_counts_as_newest(self):
        params = ControllerParams(j=2)
        state = _state(params, es=[0.3, 0.2])
        assert past_error_average(state, params, e_now=0.1) == pytest.approx(0.3)

    def test_short_history_is_inactive(self):
        params = ControllerParams(j=2)
        assert past_error_average(_state(params, es=[0.5]), params, e_now=0.5) == 0.0

    def test_true_mean_variant(self):
        params = ControllerParams(j=2, strict_eq7=False)
        state = _state(params, es=[0.3, 0.2])
        assert past_error_average(state, params, e_now=0.1) == pytest.approx(0.15)


class TestModulateStep:
    def test_spaace_m_substitution(self):
        params = ControllerParams(mode=Mode.SPAACE_M, m1=-0.3, m2=-1.0, n=1, j=2, epsilon=0.05)
        # x_pred = 2*0.3 - 0.1 = 0.5 -> e_pred 0.2; e_past = (0.4 + 0.1 + 0.1) / 2 = 0.3
        state = _state(params, xs=[0.1], es=[0.1, 0.1])
        assert modulate_step(state, params, 0.7, 0.3) == pytest.approx(0.34)

    def test_spaace_raises_set_point_above_reference(self):
        params = ControllerParams(mode=Mode.SPAACE, m1=-0.3, n=1)
        # x_pred = 2*0.5 - 0.33 = 0.67 -> e_pred -0.37
        state = _state(params, xs=[0.33])
        assert modulate_step(state, params, 0.3, 0.5) == pytest.approx(0.411)

    @pytest.mark.parametrize("mode", list(Mode))
    def test_dead_zone(self, mode):
        params = ControllerParams(mode=mode, m1=-0.3, m2=-1.0, n=1)
        state = _state(params, xs=[0.1], es=[0.3, 0.3])
        assert modulate_step(state, params, 0.7, 0.66) == 0.7

    def test_base_mode_passes_through_and_records(self):
        params = ControllerParams(mode=Mode.BASE, n=1)
        state = ModulatorState(params)
        assert modulate_step(state, params, 0.7, 0.1) == 0.7
        assert list(state.x_history) == [0.1]
        assert list(state.e_history) == [pytest.approx(0.6)]

    def test_cold_start_issues_reference(self):
        params = ControllerParams(mode=Mode.SPAACE_M, n=4)
        state = _state(params, xs=[0.1, 0.2, 0.3])
        assert modulate_step(state, params, 0.7, 0.3) == 0.7

    def test_output_is_saturated(self):
        params = ControllerParams(mode=Mode.SPAACE, m1=10.0, n=1, saturation=1.2)
        state = _state(params, xs=[0.9])
        assert modulate_step(state, params, 1.0, 0.1) == 1.2

    def test_histories_are_bounded(self):
        params = ControllerParams(n=4, j=2)
        state = ModulatorState(params)
        for k in range(50):
            modulate_step(state, params, 0.7, 0.01 * k)
        assert len(state.x_history) == max(params.n, params.j) + 1
        assert len(state.e_history) == params.j + 1

    def test_non_monotone_time_is_rejected(self):
        params = ControllerParams()
        state = ModulatorState(params)
        modulate_step(state, params, 0.7, 0.3, t=1e-3)
        with pytest.raises(PreconditionError, match="monotone"):
            modulate_step(state, params, 0.7, 0.3, t=1e-3)


class TestReset:
    def test_reset_returns_cold_state(self):
        params = ControllerParams(mode=Mode.SPAACE, m1=-0.3, n=1)
        state = _state(params, xs=[0.9, 0.9], es=[0.1, 0.1])
        reset(state)
        assert not state.initialized
        assert modulate_step(state, params, 0.3, 0.5) == 0.3

    def test_reset_is_idempotent(self):
        params = ControllerParams()
        state = _state(params, xs=[0.1], es=[0.2])
        reset(reset(state))
        assert len(state.x_history) == 0 and len(state.e_history) == 0 and state.last_t is None

    def test_history_refills_after_reset(self):
        params = ControllerParams(n=4, j=2)
        state = _state(params, xs=[0.2] * 5)
        reset(state)
        for k in range(params.n):
            assert not state.initialized
            modulate_step(state, params, 0.5, 0.5)
        assert state.initialized

    def test_modulator_update_params_keeps_history(self):
        modulator = Modulator(ControllerParams(n=4, j=2))
        for k in range(5):
            modulator.step(0.5, 0.1 * k)
        modulator.update_params(ControllerParams(n=1, j=1))
        assert list(modulator.state.x_history) == pytest.approx([0.3, 0.4])
        assert len(modulator.state.e_history) == 2


class TestProperties:
    rng_seed = 20240611

    def test_passthrough_with_zero_gains(self):
        rng = np.random.default_rng(self.rng_seed)
        refs, xs = _random_trace(rng, 400)
        params = ControllerParams(mode=Mode.SPAACE_M, m1=0.0, m2=0.0, epsilon=0.0)
        assert _drive(params, refs, xs) == [float(r) for r in refs]

    def test_spaace_m_without_memory_reduces_to_spaace(self):
        rng = np.random.default_rng(self.rng_seed + 1)
        refs, xs = _random_trace(rng, 400)
        with_memory = ControllerParams(mode=Mode.SPAACE_M, m1=-0.3, m2=0.0, epsilon=0.01)
        single_gain = ControllerParams(mode=Mode.SPAACE, m1=-0.3, epsilon=0.01)
        assert _drive(with_memory, refs, xs) == _drive(single_gain, refs, xs)

    def test_dead_zone_holds_everywhere(self):
        rng = np.random.default_rng(self.rng_seed + 2)
        refs, xs = _random_trace(rng, 400)
        params = ControllerParams(mode=Mode.SPAACE_M, m1=-0.3, m2=-1.0, epsilon=0.2)
        out = _drive(params, refs, xs)
        inside = np.abs(refs - xs) <= params.epsilon
        assert inside.any()
        assert all(o == r for o, r, hit in zip(out, refs, inside) if hit)

    def test_causality_under_truncation(self):
        rng = np.random.default_rng(self.rng_seed + 3)
        refs, xs = _random_trace(rng, 300)
        params = ControllerParams(mode=Mode.SPAACE_M, m1=0.2, m2=-0.5, epsilon=0.02)
        full = _drive(params, refs, xs)
        for cut in (1, 17, 150, 299):
            assert _drive(params, refs[:cut], xs[:cut]) == full[:cut]

    def test_steady_state_is_neutral(self):
        params = ControllerParams(mode=Mode.SPAACE_M, m1=-0.3, m2=-1.0, epsilon=0.0)
        assert _drive(params, [0.42] * 200, [0.42] * 200) == [0.42] * 200

    @pytest.mark.parametrize("strict, gain", [(True, 1.8), (False, 1.3)])
    def test_published_gains_amplify_a_held_error(self, strict, gain):
        params = ControllerParams(mode=Mode.SPAACE_M, m1=-0.3, m2=-1.0, n=1, j=2, strict_eq7=strict)
        x_ref, x = 0.7, 0.6
        issued = _drive(params, [x_ref] * 4, [x] * 4)[-1]
        # a unity-gain plant holding x settles at the issued reference
        assert (x_ref - issued) / (x_ref - x) == pytest.approx(gain)


class TestOracleEquivalence:
    TRACES = 1000
    STEPS = 500
    DRAWS = 10

    def _draw(self, rng: np.random.Generator, mode: Mode) -> ControllerParams:
        return ControllerParams(
            mode=mode,
            m1=float(rng.uniform(-1.0, 1.0)),
            m2=float(rng.uniform(-1.5, 0.5)),
            n=int(rng.integers(1, 8)),
            j=int(rng.integers(1, 5)),
            t_sample=float(rng.choice([2e-5, 2e-4, 3e-3])),
            epsilon=float(rng.uniform(0.0, 0.1)),
            strict_eq7=bool(rng.integers(0, 2)),
            saturation=float(rng.uniform(1.0, 2.0)),
        )

    @pytest.mark.parametrize("mode", [Mode.SPAACE, Mode.SPAACE_M])
    def test_matches_direct_transcription(self, mode):
        rng = np.random.default_rng(12345 if mode is Mode.SPAACE else 54321)
        per_draw = self.TRACES // self.DRAWS
        worst = 0.0
        for _ in range(self.DRAWS):
            params = self._draw(rng, mode)
            for _ in range(per_draw):
                refs, xs = _random_trace(rng, self.STEPS)
                got = np.array(_drive(params, refs, xs))
                want = np.array(_oracle(params, refs, xs))
                worst = max(worst, float(np.max(np.abs(got - want))))
        assert worst <= 1e-12
