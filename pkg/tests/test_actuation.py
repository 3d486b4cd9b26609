import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wingsense.actuation import (CurrentTrace, MotorParams, kinematic_drive_voltage,
                                 load_current, motor_step, no_load_rate, sample_currents,
                                 sense_power, stall_current, wing_rate_from_current)
from wingsense.dynamics import ControlInput
from wingsense.harness.calibration import Bench, clamped_trace

M = MotorParams()


def test_params_must_be_positive():
    for name in ("R_a", "K_a", "N_g", "J_d", "R_sense"):
        with pytest.raises(ValueError):
            MotorParams(**{name: 0.0})


def test_stall_and_no_load():
    i, _ = motor_step(12.0, 0.0, 0.0, M)
    assert i == pytest.approx(12.0 / M.R_a) == pytest.approx(stall_current(12.0, M))
    w = no_load_rate(12.0, M)
    i0, _ = motor_step(12.0, w, 0.0, M)
    assert i0 == pytest.approx(0.0, abs=1e-12)
    assert 12.0 == pytest.approx(M.K_a * w / M.N_g)


def test_default_constants_meet_design_limits():
    assert stall_current(12.0, M) < 5.0
    # required peak stroke rate at 15 V: amplitude 15/12 rad at 34 Hz
    assert no_load_rate(12.0, M) > 2 * np.pi * 34.0 * 15.0 / 12.0


@given(st.floats(-20, 20), st.floats(-2000, 2000))
def test_current_round_trip(V, rate):
    i, _ = motor_step(V, rate, 0.0, M)
    assert wing_rate_from_current(V, i, M) == pytest.approx(rate, rel=1e-12, abs=1e-9)


def test_kinematic_drive_current_is_load_current():
    for tau in (0.0, 1e-4, 5e-4):
        V = kinematic_drive_voltage(200.0, tau, M)
        i, acc = motor_step(V, 200.0, tau, M)
        assert i == pytest.approx(load_current(tau, M), rel=1e-12, abs=1e-15)
        assert acc == pytest.approx(0.0, abs=1e-6)


def _settled_current(load_scale, V=6.0, dt=1e-5, steps=20000):
    # free drivetrain at fixed voltage against a quadratic drag load
    rate = 0.0
    tail = []
    for k in range(steps):
        i, a = motor_step(V, rate, load_scale * rate * abs(rate), M, dt)
        rate += a * dt
        if k >= steps - 1000:
            tail.append(i)
    return float(np.mean(tail))


def test_mean_current_grows_with_load_at_fixed_voltage():
    loads = [1e-10, 1e-9, 5e-9, 2e-8]
    means = [_settled_current(s) for s in loads]
    assert all(b > a for a, b in zip(means, means[1:]))
    assert means[-1] < stall_current(6.0, M)


def test_sample_count_and_spacing():
    tr = sample_currents(lambda t: (np.ones_like(t), np.zeros_like(t)), 0.0, 3 / 34.0)
    assert len(tr) in (176, 177)
    assert np.allclose(np.diff(tr.t), 1 / 2000.0, rtol=0, atol=1e-15)
    assert tr.t[0] == 0.0 and tr.t[-1] < 3 / 34.0


def test_sample_noise_free_exact_and_seeded():
    f = lambda t: (np.sin(t), np.cos(t))  # noqa: E731
    tr = sample_currents(f, 0.1, 0.2)
    np.testing.assert_array_equal(tr.i_L, np.sin(tr.t))
    a = sample_currents(f, 0.1, 0.2, noise_sigma=0.01, seed=4)
    b = sample_currents(f, 0.1, 0.2, noise_sigma=0.01, seed=4)
    np.testing.assert_array_equal(a.as_array(), b.as_array())
    assert not np.array_equal(a.i_L, tr.i_L)


def test_sample_interpolates_fine_trace_and_rejects_empty_window():
    t = np.linspace(0, 1, 10001)
    fine = CurrentTrace(t, 2 * t, 3 * t, rate=10000.0)
    tr = sample_currents(fine, 0.0, 0.5)
    np.testing.assert_allclose(tr.i_R, 3 * tr.t, atol=1e-12)
    assert tr[0].t == 0.0 and list(tr)[1].i_L == pytest.approx(2 / 2000.0)
    with pytest.raises(ValueError):
        sample_currents(fine, 0.5, 0.5)


def test_current_drops_as_drag_multiplier_drops():
    b = Bench()
    means = [clamped_trace(b, ControlInput(12.0), d, 3, settle_beats=1).i.mean()
             for d in (15.0, 4.0, 3.3, 2.3)]
    # G_D falls monotonically over this sequence of clearances
    assert all(y < x for x, y in zip(means, means[1:]))


@pytest.mark.parametrize("u", [ControlInput(V) for V in (10.0, 12.0, 15.0)]
                         + [ControlInput(15.0, dV, 0.0, s)
                            for dV, s in itertools.product((-3.0, 3.0), (-0.2, 0.2))])
def test_sense_resistor_within_rating(u):
    # the rating is thermal, so it applies to wingbeat-mean dissipation
    tr = clamped_trace(Bench(), u, 15.0, 1, settle_beats=1)
    assert np.all(sense_power(tr.i, M).mean(axis=0) <= M.sense_rating)
