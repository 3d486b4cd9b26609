"""Rigid-body flight dynamics, wing stroke kinematics and quasi-steady aerodynamics.

Frames: body x forward, y left, z up; ``R`` maps body vectors to the inertial
frame.  Each wing sweeps in the body x-y plane about a vertical stroke axis.
The stroke angle ``phi`` is zero with the wing straight out sideways and
positive when swept forward, so the upstroke is the forward (+x) sweep.

The hot loops are ``numba`` kernels (leading underscore); the public
functions wrap them with dataclass inputs and outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numba import njit

GRAVITY = 9.8
LEFT, RIGHT = 0, 1
# stroke-axis sign of each wing in the body y direction
SIDE_SIGN = (1.0, -1.0)


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class HalfStroke(str, Enum):
    UP = "upstroke"
    DOWN = "downstroke"


class StateFault(ValueError):
    """Raised when a state or wrench carries non-finite values."""

    def __init__(self, field_name: str):
        super().__init__(f"non-finite value in {field_name}")
        self.field = field_name


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class VehicleState:
    P: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega_b: np.ndarray

    @classmethod
    def hover(cls, position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> "VehicleState":
        c, s = math.cos(yaw), math.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(np.asarray(position, float).copy(), np.zeros(3), R, np.zeros(3))

    @classmethod
    def from_vector(cls, y: np.ndarray) -> "VehicleState":
        y = np.asarray(y, float)
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:15].reshape(3, 3).copy(), y[15:18].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.P, self.v, np.asarray(self.R).ravel(), self.omega_b])

    @property
    def roll(self) -> float:
        return math.atan2(self.R[2, 1], self.R[2, 2])

    @property
    def pitch(self) -> float:
        return -math.asin(max(-1.0, min(1.0, self.R[2, 0])))

    @property
    def yaw(self) -> float:
        return math.atan2(self.R[1, 0], self.R[0, 0])


@dataclass(frozen=True)
class VehicleParams:
    """Mass properties, wing geometry and aerodynamic coefficients.

    ``lift_coeff`` and the drag coefficients are per wing.  The defaults put
    hover at ``hover_voltage`` out of ground effect, and put the cycle-mean
    motor currents at 3.3 mean chords on the reference threshold lines
    at 12 V (0.242 A left, 0.205 A right).
    """

    mass: float = 0.012
    inertia: np.ndarray = field(default_factory=lambda: np.diag([1.6e-5, 1.4e-5, 0.8e-5]))
    gravity: float = GRAVITY
    wingspan: float = 0.17
    mean_chord: float = 0.0212
    wingbeat_hz: float = 34.0
    root_offset: float = 0.0
    stroke_plane_height: float = 0.0
    cp_fraction: float = 0.6
    amplitude_gain: float = 1.0 / 12.0  # rad of stroke amplitude per volt
    bias_gain: float = 1.0 / 12.0  # rad of mean stroke shift per volt of bias
    hover_voltage: float = 12.0
    lift_coeff: float | None = None
    drag_coeff_left: float = 1.3256376e-07
    drag_coeff_right: float = 1.1228665e-07
    lift_efficiency: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        I = np.asarray(self.inertia, float)
        object.__setattr__(self, "inertia", I)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if not np.allclose(I, I.T) or np.any(np.linalg.eigvalsh(I) <= 0):
            raise ValueError("inertia must be symmetric positive-definite")
        if self.lift_coeff is None:
            omega = 2 * math.pi * self.wingbeat_hz
            amp = self.amplitude_gain * self.hover_voltage
            mean_sq_rate = 0.5 * (amp * omega) ** 2
            object.__setattr__(
                self, "lift_coeff", self.mass * self.gravity / (2.0 * mean_sq_rate)
            )

    @property
    def wing_length(self) -> float:
        return 0.5 * self.wingspan - self.root_offset

    @property
    def cp_radius(self) -> float:
        return self.cp_fraction * self.wing_length

    @property
    def period(self) -> float:
        return 1.0 / self.wingbeat_hz

    def with_(self, **changes) -> "VehicleParams":
        if "lift_coeff" not in changes and any(
            k in changes for k in ("mass", "amplitude_gain", "hover_voltage", "wingbeat_hz", "gravity")
        ):
            changes["lift_coeff"] = None
        return replace(self, **changes)

    def pack(self) -> np.ndarray:
        """Flat float64 layout consumed by the kernels (see ``VP_*``)."""
        I = self.inertia
        Iinv = np.linalg.inv(I)
        return np.concatenate(
            [
                [self.mass, self.gravity, self.wingbeat_hz, self.amplitude_gain, self.bias_gain,
                 self.lift_coeff, self.lift_efficiency[0], self.lift_efficiency[1],
                 self.drag_coeff_left, self.drag_coeff_right, self.cp_radius, self.root_offset,
                 self.stroke_plane_height, self.wing_length, self.mean_chord],
                I.ravel(),
                Iinv.ravel(),
            ]
        )


VP_MASS, VP_G, VP_F, VP_KA, VP_KB, VP_KL, VP_ETA_L, VP_ETA_R = range(8)
VP_KD_L, VP_KD_R, VP_RC, VP_R0, VP_ZW, VP_LW, VP_CBAR = range(8, 15)
VP_I = 15
VP_IINV = 24


@dataclass(frozen=True)
class ControlInput:
    V_s: float = 12.0
    dV: float = 0.0
    V_b: float = 0.0
    sigma: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.V_s, self.dV, self.V_b, self.sigma])


@dataclass(frozen=True)
class Envelope:
    """Actuator limits used to clamp commanded excitation."""

    V_s: tuple[float, float] = (0.0, 15.0)
    dV: tuple[float, float] = (-3.0, 3.0)
    V_b: tuple[float, float] = (-3.0, 3.0)
    sigma: tuple[float, float] = (-0.2, 0.2)

    def clamp(self, u: ControlInput) -> tuple[ControlInput, tuple[bool, bool, bool, bool]]:
        vals, flags = [], []
        for name in ("V_s", "dV", "V_b", "sigma"):
            lo, hi = getattr(self, name)
            x = getattr(u, name)
            c = min(max(x, lo), hi)
            vals.append(c)
            flags.append(c != x)
        return ControlInput(*vals), tuple(flags)

    def contains(self, u: ControlInput) -> bool:
        return not any(self.clamp(u)[1])


@dataclass(frozen=True)
class WingState:
    side: Side
    phi_w: float
    phi_w_dot: float
    half_stroke: HalfStroke


@dataclass(frozen=True)
class WrenchGains:
    K_V: float
    K_phi: float
    K_theta: float
    K_psi: float
    tau_x0: float = 0.0
    tau_y0: float = 0.0
    tau_z0: float = 0.0

    def pack(self) -> np.ndarray:
        return np.array([self.K_V, self.K_phi, self.K_theta, self.K_psi,
                         self.tau_x0, self.tau_y0, self.tau_z0])


@dataclass(frozen=True)
class AeroWrench:
    force: np.ndarray
    torque: np.ndarray
    load_torque: tuple[float, float]


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _stroke(t, f, amp, offset, up_frac):
    """Split-cycle stroke: returns (phi, phi_dot, is_upstroke).

    Each wingbeat starts at the front turnaround with the downstroke, which
    lasts ``1 - up_frac`` of the period; the upstroke takes the remainder.
    """
    x = t * f
    tau = x - math.floor(x)
    down = 1.0 - up_frac
    if tau < down:
        th = math.pi * tau / down
        thd = math.pi * f / down
        up = False
    else:
        th = math.pi + math.pi * (tau - down) / up_frac
        thd = math.pi * f / up_frac
        up = True
    return offset + amp * math.cos(th), -amp * math.sin(th) * thd, up


@njit(cache=True)
def _wing_drive(u, vp):
    """Per-wing (amplitude, offset, upstroke fraction) for excitation ``u``."""
    vl = max(u[0] + 0.5 * u[1], 0.0)
    vr = max(u[0] - 0.5 * u[1], 0.0)
    sig = min(max(u[3], -0.45), 0.45)
    off = -vp[VP_KB] * u[2]
    return (vp[VP_KA] * vl, off, 0.5 + sig), (vp[VP_KA] * vr, off, 0.5 - sig)


@njit(cache=True)
def _wing_aero(phi, phid, s, wx, wy, wz, GL, GD, kL, kD, rc, r0, zw):
    """Quasi-steady wrench of one wing about the body origin.

    ``(wx, wy, wz)`` is the air velocity relative to the body, body frame.
    Returns (fx, fy, fz, tx, ty, tz, Q) with ``Q`` the drag torque about the
    stroke axis, positive when resisting positive stroke rate.
    """
    sp, cp = math.sin(phi), math.cos(phi)
    # blade tangential direction d(dir)/dphi
    tx_, ty_ = cp, -s * sp
    u_t = rc * phid - (wx * tx_ + wy * ty_)
    rate = u_t / rc
    lift = kL * GL * rate * rate
    Q = kD * GD * rate * abs(rate)
    fd = Q / rc
    fx = -fd * tx_
    fy = -fd * ty_
    fz = lift
    rx = rc * sp
    ry = s * (r0 + rc * cp)
    rz = zw
    return (fx, fy, fz,
            ry * fz - rz * fy,
            rz * fx - rx * fz,
            rx * fy - ry * fx,
            Q)


@njit(cache=True)
def _rb_deriv(y, F, T, m, g, I, Iinv, out):
    R = y[6:15]
    # inertial force
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = (R[0] * F[0] + R[1] * F[1] + R[2] * F[2]) / m
    out[4] = (R[3] * F[0] + R[4] * F[1] + R[5] * F[2]) / m
    out[5] = (R[6] * F[0] + R[7] * F[1] + R[8] * F[2]) / m - g
    wx, wy, wz = y[15], y[16], y[17]
    # Rdot = R * hat(w)
    for r in range(3):
        a, b, c = R[3 * r], R[3 * r + 1], R[3 * r + 2]
        out[6 + 3 * r] = b * wz - c * wy
        out[7 + 3 * r] = c * wx - a * wz
        out[8 + 3 * r] = a * wy - b * wx
    Iw0 = I[0] * wx + I[1] * wy + I[2] * wz
    Iw1 = I[3] * wx + I[4] * wy + I[5] * wz
    Iw2 = I[6] * wx + I[7] * wy + I[8] * wz
    r0 = T[0] - (wy * Iw2 - wz * Iw1)
    r1 = T[1] - (wz * Iw0 - wx * Iw2)
    r2 = T[2] - (wx * Iw1 - wy * Iw0)
    out[15] = Iinv[0] * r0 + Iinv[1] * r1 + Iinv[2] * r2
    out[16] = Iinv[3] * r0 + Iinv[4] * r1 + Iinv[5] * r2
    out[17] = Iinv[6] * r0 + Iinv[7] * r1 + Iinv[8] * r2


@njit(cache=True)
def _orthonormalize(y):
    """Gram-Schmidt on the columns of the rotation block of ``y``."""
    R = y[6:15]
    c0 = np.array([R[0], R[3], R[6]])
    c1 = np.array([R[1], R[4], R[7]])
    n0 = math.sqrt(c0[0] ** 2 + c0[1] ** 2 + c0[2] ** 2)
    c0 /= n0
    d = c0[0] * c1[0] + c0[1] * c1[1] + c0[2] * c1[2]
    c1 -= d * c0
    n1 = math.sqrt(c1[0] ** 2 + c1[1] ** 2 + c1[2] ** 2)
    c1 /= n1
    c2x = c0[1] * c1[2] - c0[2] * c1[1]
    c2y = c0[2] * c1[0] - c0[0] * c1[2]
    c2z = c0[0] * c1[1] - c0[1] * c1[0]
    R[0], R[3], R[6] = c0[0], c0[1], c0[2]
    R[1], R[4], R[7] = c1[0], c1[1], c1[2]
    R[2], R[5], R[8] = c2x, c2y, c2z


@njit(cache=True)
def _rk4_step(y, F, T, m, g, I, Iinv, dt, k1, k2, k3, k4, tmp):
    _rb_deriv(y, F, T, m, g, I, Iinv, k1)
    for i in range(18):
        tmp[i] = y[i] + 0.5 * dt * k1[i]
    _rb_deriv(tmp, F, T, m, g, I, Iinv, k2)
    for i in range(18):
        tmp[i] = y[i] + 0.5 * dt * k2[i]
    _rb_deriv(tmp, F, T, m, g, I, Iinv, k3)
    for i in range(18):
        tmp[i] = y[i] + dt * k3[i]
    _rb_deriv(tmp, F, T, m, g, I, Iinv, k4)
    for i in range(18):
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    _orthonormalize(y)


@njit(cache=True)
def _integrate(y, F, T, m, g, I, Iinv, dt, n):
    """``n`` RK4 steps under a constant body wrench; returns the worst
    orthonormality and determinant errors seen after any step."""
    k1 = np.empty(18)
    k2 = np.empty(18)
    k3 = np.empty(18)
    k4 = np.empty(18)
    tmp = np.empty(18)
    worst_orth = 0.0
    worst_det = 0.0
    for _ in range(n):
        _rk4_step(y, F, T, m, g, I, Iinv, dt, k1, k2, k3, k4, tmp)
        Rm = y[6:15].reshape((3, 3))
        E = Rm.T @ Rm - np.eye(3)
        e = math.sqrt(np.sum(E * E))
        if e > worst_orth:
            worst_orth = e
        dd = abs(np.linalg.det(Rm) - 1.0)
        if dd > worst_det:
            worst_det = dd
    return worst_orth, worst_det


@njit(cache=True)
def _cycle_average(u, vp, GL, GD, wind_b, n):
    """Mean body wrench and mean |load torque| per wing over one wingbeat
    with the body held still (midpoint rule, ``n`` samples)."""
    f = vp[VP_F]
    (aL, oL, uL), (aR, oR, uR) = _wing_drive(u, vp)
    acc = np.zeros(8)
    for j in range(n):
        t = (j + 0.5) / (n * f)
        for w in range(2):
            if w == 0:
                phi, phid, up = _stroke(t, f, aL, oL, uL)
                kL = vp[VP_KL] * vp[VP_ETA_L]
                kD = vp[VP_KD_L]
            else:
                phi, phid, up = _stroke(t, f, aR, oR, uR)
                kL = vp[VP_KL] * vp[VP_ETA_R]
                kD = vp[VP_KD_R]
            s = 1.0 if w == 0 else -1.0
            r = _wing_aero(phi, phid, s, wind_b[0], wind_b[1], wind_b[2], GL, GD, kL, kD,
                           vp[VP_RC], vp[VP_R0], vp[VP_ZW])
            for k in range(6):
                acc[k] += r[k]
            acc[6 + w] += abs(r[6])
    return acc / n


# ---------------------------------------------------------------------------
# public operations


def _check_finite(name: str, x) -> None:
    if not np.all(np.isfinite(np.asarray(x, float))):
        raise StateFault(name)


def step_rigid_body(state: VehicleState, force_b, torque_b, params: VehicleParams,
                    dt: float = 1e-4) -> VehicleState:
    """Advance the rigid body by one RK4 step under a constant body wrench."""
    if not (0.0 < dt <= 1e-4 + 1e-15):
        raise ValueError(f"physics step must be in (0, 1e-4] s, got {dt}")
    for name, val in (("P", state.P), ("v", state.v), ("R", state.R),
                      ("omega_b", state.omega_b), ("force", force_b), ("torque", torque_b)):
        _check_finite(name, val)
    y = state.to_vector()
    vp = params.pack()
    _integrate(y, np.asarray(force_b, float), np.asarray(torque_b, float), params.mass,
               params.gravity, vp[VP_I:VP_I + 9], vp[VP_IINV:VP_IINV + 9], dt, 1)
    return VehicleState.from_vector(y)


def integrate_rigid_body(state: VehicleState, force_b, torque_b, params: VehicleParams,
                         dt: float, n_steps: int) -> tuple[VehicleState, float, float]:
    """Many RK4 steps under a constant wrench.

    Returns the final state and the worst per-step ``||R^T R - I||_F`` and
    ``|det R - 1|`` encountered.
    """
    y = state.to_vector()
    vp = params.pack()
    orth, det = _integrate(y, np.asarray(force_b, float), np.asarray(torque_b, float),
                           params.mass, params.gravity, vp[VP_I:VP_I + 9],
                           vp[VP_IINV:VP_IINV + 9], dt, n_steps)
    return VehicleState.from_vector(y), orth, det


def wing_kinematics(t: float, u: ControlInput, params: VehicleParams) -> tuple[WingState, WingState]:
    """Left and right wing stroke state at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    drives = _wing_drive(u.as_array(), params.pack())
    out = []
    for side, (amp, off, frac) in zip((Side.LEFT, Side.RIGHT), drives):
        phi, phid, up = _stroke(t, params.wingbeat_hz, amp, off, frac)
        out.append(WingState(side, phi, phid, HalfStroke.UP if up else HalfStroke.DOWN))
    return out[0], out[1]


def aero_wrench(wings: tuple[WingState, WingState], wind_rel=(0.0, 0.0, 0.0),
                ge: tuple[float, float] = (1.0, 1.0),
                params: VehicleParams | None = None) -> AeroWrench:
    """Instantaneous quasi-steady body wrench and per-wing load torque.

    Lift scales with ``G_L * rate**2`` and the stroke-axis drag torque with
    ``G_D * rate * |rate|``, where ``rate`` is the blade speed relative to the
    air divided by the centre-of-pressure radius.  ``wind_rel`` is the air
    velocity relative to the body, in body axes.
    """
    GL, GD = ge
    if GL <= 0 or GD <= 0:
        raise ValueError("ground-effect multipliers must be positive")
    p = params or VehicleParams()
    wx, wy, wz = (float(c) for c in wind_rel)
    F = np.zeros(3)
    T = np.zeros(3)
    Q = [0.0, 0.0]
    for w in wings:
        i = LEFT if w.side == Side.LEFT else RIGHT
        kL = p.lift_coeff * p.lift_efficiency[i]
        kD = p.drag_coeff_left if i == LEFT else p.drag_coeff_right
        r = _wing_aero(w.phi_w, w.phi_w_dot, SIDE_SIGN[i], wx, wy, wz, GL, GD, kL, kD,
                       p.cp_radius, p.root_offset, p.stroke_plane_height)
        F += r[0:3]
        T += r[3:6]
        Q[i] = r[6]
    return AeroWrench(F, T, (Q[0], Q[1]))


def cycle_average_wrench(u: ControlInput, params: VehicleParams, ge=(1.0, 1.0),
                         wind_rel=(0.0, 0.0, 0.0), n: int = 2000):
    """Wingbeat-averaged body force, torque and mean |load torque| per wing."""
    r = _cycle_average(u.as_array(), params.pack(), float(ge[0]), float(ge[1]),
                       np.asarray(wind_rel, float), n)
    return r[0:3], r[3:6], (r[6], r[7])


def control_wrench(u: ControlInput, gains: WrenchGains) -> tuple[float, np.ndarray]:
    """Linear excitation-to-wrench map: thrust and body torques."""
    tau = np.array([
        gains.K_phi * u.dV + gains.tau_x0,
        gains.K_theta * u.V_b + gains.tau_y0,
        gains.K_psi * u.sigma + gains.tau_z0,
    ])
    return gains.K_V * u.V_s, tau


def calibrate_wrench_gains(params: VehicleParams, hover_voltage: float | None = None,
                           step: tuple[float, float, float] = (0.5, 0.5, 0.02)) -> WrenchGains:
    """Fit the linear wrench gains by cycle-averaging the stroke model.

    Thrust gain is the secant through the hover point so that
    ``K_V * V_hover`` equals the averaged lift there; torque gains are
    central differences about hover, trims are the averaged hover torques.
    """
    Vh = params.hover_voltage if hover_voltage is None else hover_voltage
    F0, T0, _ = cycle_average_wrench(ControlInput(Vh), params)
    dV, dVb, dsig = step

    def torque(**kw):
        return cycle_average_wrench(ControlInput(Vh, **kw), params)[1]

    K_phi = (torque(dV=dV)[0] - torque(dV=-dV)[0]) / (2 * dV)
    K_theta = (torque(V_b=dVb)[1] - torque(V_b=-dVb)[1]) / (2 * dVb)
    K_psi = (torque(sigma=dsig)[2] - torque(sigma=-dsig)[2]) / (2 * dsig)
    return WrenchGains(F0[2] / Vh, K_phi, K_theta, K_psi, T0[0], T0[1], T0[2])


def hover_voltage_for(params: VehicleParams, lift_multiplier: float = 1.0) -> float:
    """Excitation amplitude giving weight-balancing cycle-mean lift."""
    return params.hover_voltage / math.sqrt(lift_multiplier)


def channel_scale(u: ControlInput, params: VehicleParams) -> np.ndarray:
    """Expected drag-current scale of each half-stroke channel.

    Ordered (left-up, left-down, right-up, right-down), normalised to 1 at
    hover excitation.  Drag goes with the square of stroke rate, which is
    set by amplitude and by the split-cycle half-period.
    """
    drives = _wing_drive(u.as_array(), params.pack())
    ref = params.amplitude_gain * params.hover_voltage
    out = np.empty(4)
    for w, (amp, _, frac) in enumerate(drives):
        a = (amp / ref) ** 2
        out[2 * w] = a * (0.5 / frac) ** 2
        out[2 * w + 1] = a * (0.5 / (1.0 - frac)) ** 2
    return out
