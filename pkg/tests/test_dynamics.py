import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wingsense.dynamics import (ControlInput, Envelope, HalfStroke, StateFault, VehicleParams,
                                VehicleState, aero_wrench, calibrate_wrench_gains,
                                control_wrench, cycle_average_wrench, integrate_rigid_body,
                                step_rigid_body, wing_kinematics, WingState, Side)

P = VehicleParams()


def test_params_reject_bad_mass_and_inertia():
    with pytest.raises(ValueError):
        VehicleParams(mass=0.0)
    with pytest.raises(ValueError):
        VehicleParams(inertia=np.diag([1e-5, -1e-5, 1e-5]))
    with pytest.raises(ValueError):
        VehicleParams(inertia=np.array([[1e-5, 1e-6, 0], [0, 1e-5, 0], [0, 0, 1e-5]]))


def test_default_geometry():
    assert P.mass == 0.012
    assert P.wingspan == 0.17
    assert P.mean_chord == 0.0212
    assert P.wingbeat_hz == 34.0
    assert P.wing_length == pytest.approx(0.085)


def test_hover_force_balance_keeps_position():
    s = VehicleState.hover((0.1, -0.2, 0.3))
    f = s.R.T @ np.array([0.0, 0.0, P.mass * P.gravity])
    out = step_rigid_body(s, f, np.zeros(3), P)
    np.testing.assert_allclose(out.P, s.P, atol=1e-12)
    np.testing.assert_allclose(out.v, 0.0, atol=1e-12)


def test_free_fall_one_step():
    out = step_rigid_body(VehicleState.hover(), np.zeros(3), np.zeros(3), P, dt=1e-4)
    assert out.v[2] == pytest.approx(-9.8e-4, abs=1e-15)
    assert out.P[2] == pytest.approx(-0.5 * 9.8 * 1e-8, abs=1e-18)


def test_torque_free_principal_spin_constant():
    # closed form: spin about a principal axis has constant body rate and
    # yaw angle equal to rate * time
    s = VehicleState(np.zeros(3), np.zeros(3), np.eye(3), np.array([0.0, 0.0, 3.0]))
    f = np.array([0.0, 0.0, P.mass * P.gravity])
    out, orth, det = integrate_rigid_body(s, f, np.zeros(3), P, 1e-4, 10_000)
    np.testing.assert_allclose(out.omega_b, [0.0, 0.0, 3.0], atol=1e-9)
    assert math.remainder(out.yaw - 3.0, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)
    assert orth < 1e-9 and det < 1e-9


def test_step_rejects_bad_dt_and_nonfinite():
    s = VehicleState.hover()
    with pytest.raises(ValueError):
        step_rigid_body(s, np.zeros(3), np.zeros(3), P, dt=2e-4)
    with pytest.raises(StateFault) as exc:
        step_rigid_body(s, np.array([0, np.nan, 0]), np.zeros(3), P)
    assert exc.value.field == "force"
    bad = VehicleState(np.array([0, 0, np.inf]), np.zeros(3), np.eye(3), np.zeros(3))
    with pytest.raises(StateFault) as exc:
        step_rigid_body(bad, np.zeros(3), np.zeros(3), P)
    assert exc.value.field == "P"


def test_gravity_cancel_drift_over_one_second():
    s = VehicleState.hover((0.0, 0.0, 0.1))
    out, _, _ = integrate_rigid_body(s, np.array([0, 0, P.mass * P.gravity]), np.zeros(3), P,
                                     1e-4, 10_000)
    assert np.linalg.norm(out.P - s.P) < 1e-6


@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3),
       st.lists(st.floats(-1e-4, 1e-4), min_size=3, max_size=3))
def test_orthonormality_preserved(w, tau):
    s = VehicleState(np.zeros(3), np.zeros(3), np.eye(3), np.array(w))
    _, orth, det = integrate_rigid_body(s, np.zeros(3), np.array(tau), P, 1e-4, 2000)
    assert orth < 1e-9
    assert det < 1e-9


def _sample_cycle(u, n=4000):
    t = np.arange(n) / (n * P.wingbeat_hz)
    L, R = zip(*(wing_kinematics(float(x), u, P) for x in t))
    return t, L, R


def test_symmetric_excitation_gives_identical_strokes():
    _, L, R = _sample_cycle(ControlInput(12.0), 400)
    for a, b in zip(L, R):
        assert a.phi_w == b.phi_w and a.phi_w_dot == b.phi_w_dot
        assert a.half_stroke == b.half_stroke
    ups = sum(w.half_stroke == HalfStroke.UP for w in L)
    assert ups == 200


def test_differential_voltage_raises_left_amplitude():
    _, L, R = _sample_cycle(ControlInput(12.0, dV=1.0), 400)
    assert max(abs(w.phi_w) for w in L) > max(abs(w.phi_w) for w in R)


@pytest.mark.parametrize("sigma", [0.1, -0.15])
def test_split_cycle_changes_half_periods(sigma):
    t, L, _ = _sample_cycle(ControlInput(12.0, sigma=sigma))
    up = np.array([w.half_stroke == HalfStroke.UP for w in L])
    # upstroke share follows 0.5 + sigma for the left wing; period unchanged
    assert up.mean() == pytest.approx(0.5 + sigma, abs=1e-3)
    # the one interior stroke reversal sits at the end of the downstroke
    rate = np.array([w.phi_w_dot for w in L])[1:]
    crossings = np.nonzero(np.diff(np.sign(rate)) != 0)[0]
    assert len(crossings) == 1
    t_rev = t[1:][crossings[0] + 1]
    assert t_rev * P.wingbeat_hz == pytest.approx(0.5 - sigma, abs=1e-3)
    w0 = wing_kinematics(0.0, ControlInput(12.0, sigma=sigma), P)[0]
    w1 = wing_kinematics(1.0 / P.wingbeat_hz, ControlInput(12.0, sigma=sigma), P)[0]
    assert w0.phi_w == pytest.approx(w1.phi_w, abs=1e-12)


def test_upstroke_moves_toward_front():
    _, L, R = _sample_cycle(ControlInput(12.0), 400)
    for w in L + R:
        if abs(w.phi_w_dot) > 1e-6:
            assert (w.phi_w_dot > 0) == (w.half_stroke == HalfStroke.UP)


def test_kinematics_rejects_negative_time():
    with pytest.raises(ValueError):
        wing_kinematics(-0.1, ControlInput(), P)


def test_still_wings_give_zero_wrench():
    w = (WingState(Side.LEFT, 0.3, 0.0, HalfStroke.UP),
         WingState(Side.RIGHT, 0.3, 0.0, HalfStroke.UP))
    r = aero_wrench(w, params=P)
    assert np.all(r.force == 0) and np.all(r.torque == 0)
    assert r.load_torque == (0.0, 0.0)


def test_doubling_rate_quadruples_lift():
    a = aero_wrench((WingState(Side.LEFT, 0.2, 10.0, HalfStroke.UP),
                     WingState(Side.RIGHT, 0.2, 10.0, HalfStroke.UP)), params=P)
    b = aero_wrench((WingState(Side.LEFT, 0.2, 20.0, HalfStroke.UP),
                     WingState(Side.RIGHT, 0.2, 20.0, HalfStroke.UP)), params=P)
    assert b.force[2] == pytest.approx(4 * a.force[2], rel=1e-12)
    F1, _, _ = cycle_average_wrench(ControlInput(6.0), P)
    F2, _, _ = cycle_average_wrench(ControlInput(12.0), P)
    assert F2[2] == pytest.approx(4 * F1[2], rel=1e-9)


@given(st.floats(0.5, 2.0), st.floats(0.5, 2.0), st.floats(-40, 40), st.floats(-1, 1))
def test_lift_and_drag_linear_in_multipliers(gl, gd, rate, phi):
    w = (WingState(Side.LEFT, phi, rate, HalfStroke.UP),
         WingState(Side.RIGHT, phi, rate, HalfStroke.UP))
    one = aero_wrench(w, ge=(1.0, 1.0), params=P)
    sc = aero_wrench(w, ge=(gl, gd), params=P)
    assert sc.force[2] == pytest.approx(gl * one.force[2], rel=1e-12, abs=1e-18)
    for a, b in zip(sc.load_torque, one.load_torque):
        assert a == pytest.approx(gd * b, rel=1e-12, abs=1e-18)


def test_ground_effect_five_percent_lift():
    F1, _, _ = cycle_average_wrench(ControlInput(12.0), P, ge=(1.0, 1.0))
    F2, _, _ = cycle_average_wrench(ControlInput(12.0), P, ge=(1.05, 1.0))
    assert F2[2] / F1[2] == pytest.approx(1.05, rel=1e-12)


def test_drag_opposes_motion_and_wind_adds():
    w = WingState(Side.LEFT, 0.0, 30.0, HalfStroke.UP)
    base = aero_wrench((w, WingState(Side.RIGHT, 0.0, 0.0, HalfStroke.UP)), params=P)
    assert base.load_torque[0] > 0
    head = aero_wrench((w, WingState(Side.RIGHT, 0.0, 0.0, HalfStroke.UP)),
                       wind_rel=(-0.5, 0.0, 0.0), params=P)
    assert head.load_torque[0] > base.load_torque[0]


def test_aero_rejects_nonpositive_multiplier():
    w = WingState(Side.LEFT, 0.0, 1.0, HalfStroke.UP)
    with pytest.raises(ValueError):
        aero_wrench((w, w), ge=(0.0, 1.0))


def test_control_wrench_linear_map():
    g = calibrate_wrench_gains(P)
    from dataclasses import replace
    g0 = replace(g, tau_x0=0.0, tau_y0=0.0, tau_z0=0.0)
    F, tau = control_wrench(ControlInput(11.0), g0)
    assert F == pytest.approx(g.K_V * 11.0) and np.all(tau == 0)
    _, t1 = control_wrench(ControlInput(12.0, dV=1.0), g)
    assert t1[0] - g.tau_x0 == pytest.approx(g.K_phi)


def test_wrench_gains_hover_balance():
    g = calibrate_wrench_gains(P)
    assert g.K_V > 0
    assert g.K_V * P.hover_voltage == pytest.approx(P.mass * P.gravity, rel=1e-6)


@pytest.mark.parametrize("u", [ControlInput(12.0, dV=0.5), ControlInput(12.0, V_b=0.5),
                               ControlInput(12.0, sigma=0.02)])
def test_cycle_average_matches_linear_map_near_hover(u):
    g = calibrate_wrench_gains(P)
    F, T, _ = cycle_average_wrench(u, P)
    Fl, Tl = control_wrench(u, g)
    assert F[2] == pytest.approx(Fl, rel=0.05)
    k = int(np.argmax(np.abs(Tl - np.array([g.tau_x0, g.tau_y0, g.tau_z0]))))
    assert T[k] == pytest.approx(Tl[k], rel=0.05)


@given(st.floats(-2.0, 2.0), st.floats(-1.0, 1.0), st.floats(-0.1, 0.1))
def test_mirror_symmetry(dV, Vb, sigma):
    # the default wings differ in drag on purpose, so mirror a symmetric one
    p = P.with_(drag_coeff_right=P.drag_coeff_left)
    F, T, _ = cycle_average_wrench(ControlInput(12.0, dV, Vb, sigma), p, n=400)
    Fm, Tm, _ = cycle_average_wrench(ControlInput(12.0, -dV, Vb, -sigma), p, n=400)
    assert Fm[2] == pytest.approx(F[2], rel=1e-9)
    assert Tm[1] == pytest.approx(T[1], rel=1e-9, abs=1e-15)
    assert Tm[0] == pytest.approx(-T[0], rel=1e-9, abs=1e-15)
    assert Tm[2] == pytest.approx(-T[2], rel=1e-9, abs=1e-15)


def test_envelope_clamp_flags():
    u, flags = Envelope().clamp(ControlInput(16.0, 0.0, -4.0, 0.0))
    assert u.V_s == 15.0 and u.V_b == -3.0
    assert flags == (True, False, True, False)
    assert Envelope().contains(ControlInput(12.0))
