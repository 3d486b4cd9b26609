"""Adaptive-robust flight controller.

Altitude and body rates are regulated on sliding surfaces

    s_z = e_z_dot + k_sz * e_z,        s_w = omega - omega_eq,

with model compensation through linear-in-parameter regressors, a linear
stabilising term and a smoothed robust term ``h^2 s / (4 eps)``.  The
commanded thrust and torques are inverted through the linear excitation
map into drive amplitude, differential voltage, bias and split-cycle.

``omega_eq`` comes from a cascade: lateral position error sets a desired
tilt, and the attitude error against that tilt and the yaw reference sets
the body-rate target.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import GRAVITY, ControlInput, Envelope, VehicleParams, WrenchGains


def rot_z(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_R(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X composition ``Rz(yaw) Ry(pitch) Rx(roll)``."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    return rot_z(yaw) @ Ry @ Rx


def hat(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def vee(M) -> np.ndarray:
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def attitude_error(R: np.ndarray, R_d: np.ndarray) -> np.ndarray:
    """``0.5 vee(R_d^T R - R^T R_d)``; approximately the body rotation vector
    taking the desired attitude to the current one."""
    return 0.5 * vee(R_d.T @ R - R.T @ R_d)


def attitude_error_rate(R: np.ndarray, R_d: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Time derivative of :func:`attitude_error` for a fixed ``R_d``."""
    A = R_d.T @ R @ hat(omega)
    return 0.5 * vee(A + A.T)


@dataclass(frozen=True)
class ControllerGains:
    k_sz: float = 5.0
    k_zl: float = 0.1
    k_wl: tuple[float, float, float] = (2.0e-4, 2.0e-4, 1.0e-4)
    h_z: float = 0.006
    h_w: tuple[float, float, float] = (2.0e-5, 2.0e-5, 1.0e-5)
    eps_z: float = 3.0e-5
    eps_w: tuple[float, float, float] = (2.0e-6, 2.0e-6, 1.0e-6)
    K_u: float | None = None  # thrust effectiveness, N/V; None → use K_V
    k_att: tuple[float, float, float] = (12.0, 12.0, 6.0)
    k_pp: float = 6.0
    k_pd: float = 4.5
    tilt_limit: float = 0.3
    ff_filter: float = 0.01  # time constant of the omega_eq derivative filter, s
    tilt_rate: float = 1.0  # slew limit on the commanded roll and pitch, rad/s

    def __post_init__(self):
        for name in ("k_sz", "k_zl", "h_z", "eps_z", "k_pp", "k_pd", "tilt_limit", "tilt_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("k_wl", "h_w", "eps_w", "k_att"):
            v = np.asarray(getattr(self, name), float)
            if v.shape != (3,) or np.any(v <= 0):
                raise ValueError(f"{name} must be three positive values")
        if self.K_u is not None and self.K_u <= 0:
            raise ValueError("K_u must be positive")

    def robust_z(self, s_z: float) -> float:
        return self.h_z ** 2 * s_z / (4.0 * self.eps_z)

    def robust_w(self, s_w) -> np.ndarray:
        h = np.asarray(self.h_w)
        return h ** 2 * np.asarray(s_w) / (4.0 * np.asarray(self.eps_w))


@dataclass
class ParamEstimates:
    """Parameter vectors matching the regressors.

    ``Theta_z = [m, 1, d_z]`` and ``Theta_w = [tau_x0, tau_y0, tau_z0, 1, 1, 1,
    d_roll, d_pitch, d_yaw]``; the unit entries are structural.
    """

    Theta_z_hat: np.ndarray
    Theta_w_hat: np.ndarray

    @classmethod
    def nominal(cls, mass: float, trims=(0.0, 0.0, 0.0)) -> "ParamEstimates":
        return cls(np.array([mass, 1.0, 0.0]),
                   np.array([*trims, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.Theta_z_hat = np.asarray(self.Theta_z_hat, float).copy()
        self.Theta_w_hat = np.asarray(self.Theta_w_hat, float).copy()
        if self.Theta_z_hat.shape != (3,) or self.Theta_w_hat.shape != (9,):
            raise ValueError("Theta_z_hat needs 3 entries and Theta_w_hat 9")
        self.Theta_z_hat[1] = 1.0
        self.Theta_w_hat[3:6] = 1.0


@dataclass(frozen=True)
class References:
    z_r: float
    z_r_dot: float = 0.0
    z_r_ddot: float = 0.0
    xy_r: tuple[float, float] = (0.0, 0.0)
    v_xy_r: tuple[float, float] = (0.0, 0.0)
    psi_r: float = 0.0
    lateral: bool = True  # False holds a level desired tilt


@dataclass
class ControlLog:
    s_z: float = 0.0
    s_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    u_z: float = 0.0
    robust_z: float = 0.0
    thrust_cmd: float = 0.0
    torque_cmd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clamped: tuple[bool, bool, bool, bool] = (False, False, False, False)
    singular: bool = False
    tilt_cmd: tuple[float, float] = (0.0, 0.0)


def _state_parts(y):
    y = np.asarray(y, float)
    return y[0:3], y[3:6], y[6:15].reshape(3, 3), y[15:18]


def sliding_surfaces(y, refs: References, gains: ControllerGains,
                     omega_eq) -> tuple[float, np.ndarray]:
    """``(s_z, s_w)`` for the 18-vector state ``y``."""
    P, v, _, w = _state_parts(y)
    e_z = P[2] - refs.z_r
    e_z_dot = v[2] - refs.z_r_dot
    return e_z_dot + gains.k_sz * e_z, w - np.asarray(omega_eq, float)


def thrust_effectiveness(R: np.ndarray, K_u: float) -> float:
    return K_u * R[2, 2]


def regressors(y, refs: References, gains: ControllerGains, inertia: np.ndarray,
               u_0: float, K_u: float, omega_eq_dot) -> tuple[np.ndarray, np.ndarray]:
    """Altitude and angular regressors ``(Phi_z, Phi_w)``.

    Raises ``ValueError`` when the thrust axis is within the singularity
    guard (``|cos(roll) cos(pitch)| < 0.1``).
    """
    _, v, R, w = _state_parts(y)
    if abs(R[2, 2]) < 0.1:
        raise ValueError("thrust axis too tilted for altitude regression")
    e_z_dot = v[2] - refs.z_r_dot
    z_eq_ddot = refs.z_r_ddot - gains.k_sz * e_z_dot
    K_z = thrust_effectiveness(R, K_u)
    Phi_z = np.array([-(GRAVITY + z_eq_ddot), K_z * u_0, 1.0])
    I = np.asarray(inertia, float)
    gyro = np.cross(w, I @ w) + I @ np.asarray(omega_eq_dot, float)
    Phi_w = np.zeros((3, 9))
    Phi_w[:, 0:3] = np.eye(3)
    Phi_w[:, 3:6] = -np.diag(gyro)
    Phi_w[:, 6:9] = np.eye(3)
    return Phi_z, Phi_w


def control_law(s_z: float, s_w, Phi_z, Phi_w, estimates: ParamEstimates,
                gains: ControllerGains, K_z: float, u_0: float,
                wrench: WrenchGains, envelope: Envelope = Envelope()):
    """Excitation command plus the thrust and torque it was built from.

    Returns ``(ControlInput, clamp_flags, K_z*u_z, torque_command)``.
    """
    Kzu = (-float(Phi_z @ estimates.Theta_z_hat) - gains.k_zl * s_z - gains.robust_z(s_z))
    tau = (-(Phi_w @ estimates.Theta_w_hat) - np.asarray(gains.k_wl) * s_w
           - gains.robust_w(s_w))
    u_z = Kzu / K_z
    u = ControlInput(u_0 + u_z, tau[0] / wrench.K_phi, tau[1] / wrench.K_theta,
                     tau[2] / wrench.K_psi)
    u, flags = envelope.clamp(u)
    return u, flags, Kzu, tau


class FlightController:
    """Stateful controller advanced once per control period."""

    def __init__(self, params: VehicleParams, wrench: WrenchGains,
                 gains: ControllerGains = ControllerGains(),
                 estimates: ParamEstimates | None = None, envelope: Envelope = Envelope(),
                 dt: float = 0.002, adapt_rate: float = 0.0):
        self.params = params
        self.wrench = wrench
        self.gains = gains
        self.K_u = wrench.K_V if gains.K_u is None else gains.K_u
        self.estimates = estimates if estimates is not None else ParamEstimates.nominal(
            params.mass, (wrench.tau_x0, wrench.tau_y0, wrench.tau_z0))
        self.envelope = envelope
        self.dt = dt
        self.adapt_rate = adapt_rate
        self.u_prev = ControlInput(params.hover_voltage)
        self._R_d_prev: np.ndarray | None = None
        self._ff = np.zeros(3)
        self._tilt: tuple[float, float] | None = None
        self.log = ControlLog()

    def desired_attitude(self, y, refs: References) -> tuple[np.ndarray, float, float]:
        P, v, _, _ = _state_parts(y)
        g = self.gains
        if not refs.lateral:
            return rot_z(refs.psi_r), 0.0, 0.0
        a = (g.k_pp * (np.asarray(refs.xy_r) - P[:2])
             + g.k_pd * (np.asarray(refs.v_xy_r) - v[:2]))
        # express the acceleration demand in the yaw-aligned frame
        c, s = math.cos(refs.psi_r), math.sin(refs.psi_r)
        a_fwd = c * a[0] + s * a[1]
        a_left = -s * a[0] + c * a[1]
        lim = g.tilt_limit
        pitch = min(max(math.atan2(a_fwd, GRAVITY), -lim), lim)
        roll = min(max(-math.atan2(a_left, GRAVITY), -lim), lim)
        return euler_to_R(roll, pitch, refs.psi_r), roll, pitch

    def omega_eq(self, R, R_d) -> np.ndarray:
        return -np.asarray(self.gains.k_att) * attitude_error(R, R_d)

    def step(self, y, refs: References) -> ControlInput:
        P, v, R, w = _state_parts(y)
        g = self.gains
        R_d, roll_d, pitch_d = self.desired_attitude(y, refs)
        if refs.lateral:
            # slew-limit the tilt command so reference jumps do not saturate
            # the attitude channels
            if self._tilt is not None:
                step = g.tilt_rate * self.dt
                roll_d = min(max(roll_d, self._tilt[0] - step), self._tilt[0] + step)
                pitch_d = min(max(pitch_d, self._tilt[1] - step), self._tilt[1] + step)
                R_d = euler_to_R(roll_d, pitch_d, refs.psi_r)
            self._tilt = (roll_d, pitch_d)
        k_att = np.asarray(g.k_att)
        w_eq = self.omega_eq(R, R_d)
        # derivative: analytic part for the current target, filtered difference
        # for the motion of the target itself
        dw_fixed = -k_att * attitude_error_rate(R, R_d, w)
        if self._R_d_prev is None:
            self._R_d_prev = R_d
        dw_target = (w_eq - self.omega_eq(R, self._R_d_prev)) / self.dt
        beta = self.dt / (g.ff_filter + self.dt)
        self._ff += beta * (dw_target - self._ff)
        self._R_d_prev = R_d
        w_eq_dot = dw_fixed + self._ff

        s_z, s_w = sliding_surfaces(y, refs, g, w_eq)
        u_0 = self.u_prev.V_s
        singular = abs(R[2, 2]) < 0.1
        K_z = thrust_effectiveness(R, self.K_u)
        if singular:
            Phi_z = np.zeros(3)
            _, Phi_w = regressors(np.concatenate([P, v, np.eye(3).ravel(), w]), refs, g,
                                  self.params.inertia, u_0, self.K_u, w_eq_dot)
        else:
            Phi_z, Phi_w = regressors(y, refs, g, self.params.inertia, u_0, self.K_u, w_eq_dot)
        u, flags, Kzu, tau = control_law(s_z, s_w, Phi_z, Phi_w, self.estimates, g,
                                         K_z if not singular else 1.0, u_0, self.wrench,
                                         self.envelope)
        if singular:
            u = replace(u, V_s=self.u_prev.V_s)
        if self.adapt_rate > 0:
            # projected disturbance update, bounded by the declared uncertainty
            d = self.estimates.Theta_z_hat[2] + self.adapt_rate * s_z * self.dt
            self.estimates.Theta_z_hat[2] = min(max(d, -g.h_z), g.h_z)
        self.u_prev = u
        self.log = ControlLog(s_z, s_w, Kzu, g.robust_z(s_z), Kzu, tau, flags, singular,
                              (roll_d, pitch_d))
        return u

    def lyapunov(self, y, refs: References) -> float:
        """``0.5 m s_z^2 + 0.5 s_w^T I s_w`` at the current state."""
        _, _, R, _ = _state_parts(y)
        R_d, _, _ = self.desired_attitude(y, refs)
        s_z, s_w = sliding_surfaces(y, refs, self.gains, self.omega_eq(R, R_d))
        I = self.params.inertia
        return 0.5 * self.params.mass * s_z ** 2 + 0.5 * float(s_w @ I @ s_w)


def trim_calibration(t, omega, u_w, wrench: WrenchGains, inertia: np.ndarray,
                     min_duration: float = 1.0) -> WrenchGains:
    """Re-identify trim torques from near-hover logs.

    ``u_w`` holds the commanded (dV, V_b, sigma) per sample.  The trim is the
    mean torque left over once the commanded torque is removed from the
    rigid-body torque balance.  With less than ``min_duration`` seconds of
    data the gains come back unchanged with a warning.
    """
    t = np.asarray(t, float)
    if len(t) < 3 or t[-1] - t[0] < min_duration - 1e-9:
        warnings.warn("not enough hover data for trim calibration", RuntimeWarning,
                      stacklevel=2)
        return wrench
    w = np.asarray(omega, float)
    u = np.asarray(u_w, float)
    I = np.asarray(inertia, float)
    w_dot = np.gradient(w, t, axis=0)
    balance = w_dot @ I.T + np.cross(w, w @ I.T)
    K = np.array([wrench.K_phi, wrench.K_theta, wrench.K_psi])
    trim = (balance - u * K).mean(axis=0)
    return replace(wrench, tau_x0=float(trim[0]), tau_y0=float(trim[1]),
                   tau_z0=float(trim[2]))
