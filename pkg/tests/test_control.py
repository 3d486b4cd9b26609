from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wingsense.control import (ControllerGains, FlightController, ParamEstimates, References,
                               euler_to_R, regressors, sliding_surfaces, trim_calibration)
from wingsense.dynamics import VehicleParams, VehicleState, calibrate_wrench_gains
from wingsense.harness.checks import averaged_step_response, flapping_step_response

P = VehicleParams()
W = calibrate_wrench_gains(P)
G = ControllerGains()


def _y(z=0.1, vz=0.0, R=None, w=(0.0, 0.0, 0.0)):
    return VehicleState(np.array([0.0, 0.0, z]), np.array([0.0, 0.0, vz]),
                        np.eye(3) if R is None else R, np.array(w, float)).to_vector()


def test_gains_validation():
    with pytest.raises(ValueError):
        ControllerGains(eps_z=0.0)
    with pytest.raises(ValueError):
        ControllerGains(k_wl=(1e-4, 1e-4))
    with pytest.raises(ValueError):
        ControllerGains(K_u=-1.0)
    with pytest.raises(ValueError):
        ParamEstimates(np.zeros(2), np.zeros(9))


def test_sliding_surface_altitude():
    s_z, s_w = sliding_surfaces(_y(z=0.11), References(0.10), G, np.zeros(3))
    assert s_z == pytest.approx(0.05)
    np.testing.assert_array_equal(s_w, 0.0)
    s_z, _ = sliding_surfaces(_y(z=0.10, vz=0.02), References(0.10, z_r_dot=0.02), G, np.zeros(3))
    assert s_z == 0.0


def test_regressors_at_hover():
    Phi_z, Phi_w = regressors(_y(), References(0.1), G, P.inertia, 11.0, W.K_V, np.zeros(3))
    np.testing.assert_allclose(Phi_z, [-9.8, W.K_V * 11.0, 1.0])
    np.testing.assert_array_equal(Phi_w[:, :3], np.eye(3))
    np.testing.assert_array_equal(Phi_w[:, 3:6], 0.0)
    # estimates times regressor balances gravity at hover voltage
    th = ParamEstimates.nominal(P.mass).Theta_z_hat
    assert float(Phi_z @ th) == pytest.approx(W.K_V * 11.0 - P.mass * 9.8)


def test_regressor_singularity_guard():
    R = euler_to_R(1.5, 0.0, 0.0)
    with pytest.raises(ValueError):
        regressors(_y(R=R), References(0.1), G, P.inertia, 11.0, W.K_V, np.zeros(3))


def test_robust_term_audit():
    for s in (-0.02, 0.003, 0.05):
        assert G.robust_z(s) == pytest.approx(G.h_z ** 2 * s / (4 * G.eps_z), rel=1e-12)
    half = replace(G, eps_z=G.eps_z / 2)
    assert half.robust_z(0.01) == pytest.approx(2 * G.robust_z(0.01), rel=1e-12)
    np.testing.assert_allclose(G.robust_w([1.0, 1.0, 1.0]),
                               np.array(G.h_w) ** 2 / (4 * np.array(G.eps_w)))


def test_controller_logs_robust_term():
    c = FlightController(P, W, dt=0.002)
    c.step(_y(z=0.12), References(0.1))
    assert c.log.robust_z == pytest.approx(G.robust_z(c.log.s_z), rel=1e-12)


def test_equilibrium_is_held():
    r = averaged_step_response(z0=0.1, z_r=0.1, duration=0.5)
    assert np.abs(r.e_z).max() < 1e-9


@pytest.mark.parametrize("d_z", [0.0, G.h_z, -G.h_z])
def test_five_cm_step_settles_in_band(d_z):
    r = averaged_step_response(z0=0.15, z_r=0.10, d_z=d_z, duration=3.0)
    assert r.settling_time(0.005) <= 2.0
    # ultimate bound from the robust design
    bound = G.h_z / (G.k_sz * (G.k_zl + G.h_z ** 2 / (4 * G.eps_z)))
    assert abs(r.e_z[-1]) <= bound * 1.01


def test_lyapunov_decreases_without_disturbance():
    r = averaged_step_response(z0=0.15, z_r=0.10)
    assert np.diff(r.lyapunov).max() <= 1e-6
    assert r.lyapunov[-1] < 1e-6 * r.lyapunov[0]


@settings(max_examples=10)
@given(st.floats(-0.05, 0.05), st.floats(-0.2, 0.2),
       st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_lyapunov_monotone_from_random_starts(dz, vz, w):
    r = averaged_step_response(y0=_y(z=0.1 + dz, vz=vz, w=w), z_r=0.1, duration=0.6)
    assert np.diff(r.lyapunov).max() <= 1e-6


def test_flapping_plant_settles():
    r = flapping_step_response(duration=2.0)
    assert r.settling_time(0.005) <= 2.0
    assert abs(r.e_z[-1]) < 0.005


@given(st.floats(-np.pi, np.pi))
def test_yaw_equivariance(psi):
    # rotating the state and references about z leaves the commands unchanged
    a = FlightController(P, W, dt=0.002)
    b = FlightController(P, W, dt=0.002)
    ya = _y(z=0.12, w=(0.1, -0.05, 0.2))
    yb = VehicleState(np.array([0.0, 0.0, 0.12]), np.zeros(3), euler_to_R(0.0, 0.0, psi),
                      np.array([0.1, -0.05, 0.2])).to_vector()
    ua = a.step(ya, References(0.1, psi_r=0.0))
    ub = b.step(yb, References(0.1, psi_r=psi))
    np.testing.assert_allclose(ua.as_array(), ub.as_array(), rtol=1e-9, atol=1e-9)


def _hover_log(trim, seconds):
    n = int(seconds * 500)
    t = np.arange(n) * 0.002
    omega = np.zeros((n, 3))
    # a steady command exactly cancelling the true trim
    u = np.tile(-np.asarray(trim) / np.array([W.K_phi, W.K_theta, W.K_psi]), (n, 1))
    return t, omega, u


def test_trim_calibration_recovers_trim():
    trim = (2e-6, -1e-6, 5e-7)
    out = trim_calibration(*_hover_log(trim, 2.0), W, P.inertia)
    assert (out.tau_x0, out.tau_y0, out.tau_z0) == pytest.approx(trim, rel=1e-9)
    again = trim_calibration(*_hover_log(trim, 2.0), out, P.inertia)
    assert again == out


def test_trim_calibration_short_log_warns():
    with pytest.warns(RuntimeWarning):
        out = trim_calibration(*_hover_log((1e-6, 0, 0), 0.5), W, P.inertia)
    assert out is W
