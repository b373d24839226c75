import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import delayed_plant

from kitempc.errors import BufferLengthMismatch, SeriesTooShort
from kitempc.tracking import (
    DelayBuffer,
    SteeringParams,
    TrackingController,
    TrackingGain,
    control,
    delay_steps,
    predict_heading,
    shifted_error,
)


def prediction_errors(rng, n_d, steps):
    K, T = rng.uniform(0.1, 2.0), 0.01
    p = SteeringParams(K, n_d * T, T)
    assert p.n_d == n_d
    delta = rng.uniform(-3.0, 3.0, steps + n_d)
    gamma = delayed_plant(rng.uniform(-2.0, 2.0), delta, n_d, K * T)
    buf = DelayBuffer(n_d)
    worst = 0.0
    for k in range(steps):
        pred = predict_heading(gamma[k], buf, p)
        worst = max(worst, abs(pred - gamma[k + n_d]))
        if n_d:
            buf.push(delta[k])
    return worst


def test_zero_inputs_predict_current_heading():
    p = SteeringParams(0.5, 0.03)
    assert predict_heading(0.2, DelayBuffer(3), p) == 0.2


def test_prediction_example():
    buf = DelayBuffer(3)
    for v in (1.0, 1.0, 2.0):
        buf.push(v)
    assert predict_heading(0.2, buf, SteeringParams(0.5, 0.03, 0.01)) == pytest.approx(0.22, abs=1e-15)


def test_buffer_length_must_match_delay():
    with pytest.raises(BufferLengthMismatch):
        predict_heading(0.0, DelayBuffer(2), SteeringParams(0.5, 0.03))


def test_matched_plant_prediction_is_exact():
    rng = np.random.default_rng(7)
    worst = max(prediction_errors(rng, int(rng.integers(0, 90)), 40) for _ in range(200))
    assert worst <= 1e-10


@given(st.integers(0, 120), st.integers(0, 2**32 - 1))
def test_prediction_exact_for_any_delay(n_d, seed):
    assert prediction_errors(np.random.default_rng(seed), n_d, 20) <= 1e-10


def test_delay_steps_rounds():
    assert delay_steps(0.7, 0.01) == 70
    assert delay_steps(0.704, 0.01) == 70
    assert delay_steps(0.0, 0.01) == 0


def test_control_law_cases():
    gain = TrackingGain(2.0)
    assert control(0.4, 0.4, gain) == 0.0
    assert control(0.3, 0.0, gain) == pytest.approx(0.6)
    assert control(0.3, 0.0, gain, delta_max=0.4) == 0.4
    assert control(-0.3, 0.0, gain, delta_max=0.4) == -0.4


def test_shifted_error_cases():
    p = SteeringParams(0.5, 0.03, 0.01)
    gamma = np.sin(np.arange(50) * 0.1)
    cmd = gamma[3:]
    assert np.all(shifted_error(cmd, gamma, p) == 0.0)
    # the heading leads the shifted command by b
    assert np.allclose(shifted_error(cmd, gamma + 0.25, p), -0.25)
    with pytest.raises(SeriesTooShort):
        shifted_error(cmd[:2], gamma[:3], p)


def test_buffer_resize_keeps_newest():
    buf = DelayBuffer(4)
    for v in (1.0, 2.0, 3.0, 4.0):
        buf.push(v)
    buf.resize(2)
    assert buf.values().tolist() == [3.0, 4.0]
    buf.resize(4)
    assert buf.values().tolist() == [3.0, 4.0, 0.0, 0.0]


def test_controller_closed_loop_converges():
    p = SteeringParams(0.5, 0.2, 0.01)
    ctl = TrackingController(p, TrackingGain(3.0))
    n = 3000
    delta = np.zeros(n + p.n_d)
    gamma = 0.0
    history = [gamma]
    for k in range(n):
        delta[k + p.n_d], _ = ctl.step(1.0, gamma)
        gamma += p.K * p.T * delta[k]
        history.append(gamma)
    assert history[-1] == pytest.approx(1.0, abs=1e-6)


def test_update_params_resizes_buffer():
    ctl = TrackingController(SteeringParams(0.5, 0.2), TrackingGain(1.0))
    ctl.update_params(SteeringParams(0.5, 0.5), TrackingGain(2.0))
    assert len(ctl.buffer) == 50
    assert ctl.gain.C_0 == 2.0
