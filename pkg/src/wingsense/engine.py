"""Fused physics block: kinematics, aerodynamics, contact, motor current and
rigid-body integration advanced together at the physics rate.

The harness calls :func:`advance` once per control period.  Everything the
kernel needs is passed as flat arrays built by :class:`PhysicsModel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .actuation import MotorParams
from .dynamics import (VP_F, VP_ETA_L, VP_ETA_R, VP_I, VP_IINV, VP_KD_L, VP_KD_R, VP_KL,
                       VP_LW, VP_R0, VP_RC, VP_ZW, VP_CBAR, VP_MASS, VP_G, VehicleParams,
                       WrenchGains, _rk4_step, _stroke, _wing_aero, _wing_drive)
from .environment import (ContactParams, GroundEffectCurve, World, _contact_load, _ppoly,
                          _terrain_height, _wind, _wing_penetration)

FREE, CLAMPED, AVERAGED = 0, 1, 2

# sample columns
S_T, S_IL, S_IR, S_UPL, S_UPR, S_D = range(6)
# misc outputs
M_MIN_D, M_GROUND, M_WALL_CROSS, M_MAX_PEN = range(4)


@njit(cache=True)
def _segments_cross(x0, y0, x1, y1, ax, ay, bx, by):
    d1 = (bx - ax) * (y0 - ay) - (by - ay) * (x0 - ax)
    d2 = (bx - ax) * (y1 - ay) - (by - ay) * (x1 - ax)
    d3 = (x1 - x0) * (ay - y0) - (y1 - y0) * (ax - x0)
    d4 = (x1 - x0) * (by - y0) - (y1 - y0) * (bx - x0)
    return d1 * d2 < 0.0 and d3 * d4 < 0.0


@njit(cache=True)
def advance(y, k0, n_steps, dt, u, vp, mp, ge_x, ge_cL, ge_cD, terrain, base_h, walls,
            gusts, cp, mode, wg, ma_buf, ma_sum, ma_idx, samp_every, samples, contact,
            misc):
    """Advance ``n_steps`` physics steps from global step ``k0``.

    Mutates ``y``, the moving-average buffers and the output arrays; returns
    ``(new_ma_idx, n_samples)``.
    """
    m = vp[VP_MASS]
    g = vp[VP_G]
    f = vp[VP_F]
    I = vp[VP_I:VP_I + 9]
    Iinv = vp[VP_IINV:VP_IINV + 9]
    rc = vp[VP_RC]
    r0 = vp[VP_R0]
    zw = vp[VP_ZW]
    Lw = vp[VP_LW]
    cbar = vp[VP_CBAR]
    kLs = (vp[VP_KL] * vp[VP_ETA_L], vp[VP_KL] * vp[VP_ETA_R])
    kDs = (vp[VP_KD_L], vp[VP_KD_R])
    KaNg = mp[1] * mp[2]
    k_c, c_c, beta = cp[0], cp[1], cp[2]
    n_st = int(cp[3])
    (aL, oL, fL), (aR, oR, fR) = _wing_drive(u, vp)

    k1 = np.empty(18)
    k2 = np.empty(18)
    k3 = np.empty(18)
    k4 = np.empty(18)
    tmp = np.empty(18)
    F = np.zeros(3)
    T = np.zeros(3)
    n_ma = ma_buf.shape[0]
    ns = 0
    x_start, y_start = y[0], y[1]

    for j in range(n_steps):
        k = k0 + j
        t = k * dt
        P = y[0:3]
        R = y[6:15].reshape((3, 3))
        D = P[2] - _terrain_height(P[0], P[1], base_h, terrain)
        if D < misc[M_MIN_D]:
            misc[M_MIN_D] = D
        if D <= 0.0:
            misc[M_GROUND] = 1.0
            D = 0.0
        dc = D / cbar
        GL = _ppoly(dc, ge_x, ge_cL)
        GD = _ppoly(dc, ge_x, ge_cD)
        wxw, wyw, wzw = _wind(t, gusts)
        ax_ = wxw - y[3]
        ay_ = wyw - y[4]
        az_ = wzw - y[5]
        wbx = R[0, 0] * ax_ + R[1, 0] * ay_ + R[2, 0] * az_
        wby = R[0, 1] * ax_ + R[1, 1] * ay_ + R[2, 1] * az_
        wbz = R[0, 2] * ax_ + R[1, 2] * ay_ + R[2, 2] * az_
        F[:] = 0.0
        T[:] = 0.0
        iw = np.zeros(2)
        upw = np.zeros(2)
        for w in range(2):
            s = 1.0 if w == 0 else -1.0
            if w == 0:
                phi, phid, up = _stroke(t, f, aL, oL, fL)
            else:
                phi, phid, up = _stroke(t, f, aR, oR, fR)
            r = _wing_aero(phi, phid, s, wbx, wby, wbz, GL, GD, kLs[w], kDs[w], rc, r0, zw)
            F[0] += r[0]
            F[1] += r[1]
            F[2] += r[2]
            T[0] += r[3]
            T[1] += r[4]
            T[2] += r[5]
            load = r[6]
            if walls.shape[0] > 0:
                pen, dpen, cx, cy, cz, nx, ny = _wing_penetration(P, R, phi, s, r0, zw, Lw,
                                                                   walls, n_st)
                if pen > 0.0:
                    body_rate = -(nx * y[3] + ny * y[4])
                    fn, tau_c = _contact_load(pen, dpen, phid, body_rate, k_c, c_c, beta)
                    load += tau_c
                    # wall reaction on the vehicle, pushed along the panel normal
                    fwx, fwy = fn * nx, fn * ny
                    fbx = R[0, 0] * fwx + R[1, 0] * fwy
                    fby = R[0, 1] * fwx + R[1, 1] * fwy
                    fbz = R[0, 2] * fwx + R[1, 2] * fwy
                    dx, dy, dz = cx - P[0], cy - P[1], cz - P[2]
                    rbx = R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz
                    rby = R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz
                    rbz = R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz
                    F[0] += fbx
                    F[1] += fby
                    F[2] += fbz
                    T[0] += rby * fbz - rbz * fby
                    T[1] += rbz * fbx - rbx * fbz
                    T[2] += rbx * fby - rby * fbx
                    if pen > contact[w, 0]:
                        contact[w, 0] = pen
                        contact[w, 1] = 1.0 if up else 0.0
                        contact[w, 2] = cx
                        contact[w, 3] = cy
                        contact[w, 4] = cz
                        contact[w, 5] = t
                    if pen > misc[M_MAX_PEN]:
                        misc[M_MAX_PEN] = pen
            iw[w] = abs(load / KaNg)
            upw[w] = 1.0 if up else 0.0
        if k % samp_every == 0:
            samples[ns, S_T] = t
            samples[ns, S_IL] = iw[0]
            samples[ns, S_IR] = iw[1]
            samples[ns, S_UPL] = upw[0]
            samples[ns, S_UPR] = upw[1]
            samples[ns, S_D] = D
            ns += 1
        if mode == FREE:
            _rk4_step(y, F, T, m, g, I, Iinv, dt, k1, k2, k3, k4, tmp)
        elif mode == AVERAGED:
            F[0] = 0.0
            F[1] = 0.0
            F[2] = wg[0] * u[0]
            T[0] = wg[1] * u[1] + wg[4]
            T[1] = wg[2] * u[2] + wg[5]
            T[2] = wg[3] * u[3] + wg[6]
            _rk4_step(y, F, T, m, g, I, Iinv, dt, k1, k2, k3, k4, tmp)
        for i in range(18):
            ma_sum[i] += y[i] - ma_buf[ma_idx, i]
            ma_buf[ma_idx, i] = y[i]
        ma_idx += 1
        if ma_idx == n_ma:
            ma_idx = 0
    for q in range(walls.shape[0]):
        if _segments_cross(x_start, y_start, y[0], y[1], walls[q, 0], walls[q, 1],
                           walls[q, 2], walls[q, 3]):
            misc[M_WALL_CROSS] = 1.0
    return ma_idx, ns


@dataclass
class PhysicsModel:
    """Packed parameter arrays plus the moving-average state estimate.

    The controller sees states averaged over one wingbeat, which removes
    the stroke-rate oscillation the way the onboard attitude filter would.
    """

    params: VehicleParams
    motor: MotorParams
    world: World
    curve: GroundEffectCurve
    contact: ContactParams
    gains: WrenchGains | None = None
    dt: float = 1e-4
    sample_every: int = 5
    mode: int = FREE

    def __post_init__(self):
        self.vp = self.params.pack()
        self.mp = self.motor.pack()
        self.ge_x, self.ge_cL, self.ge_cD = self.curve.pack()
        self.terrain = self.world.terrain_array()
        self.walls = self.world.wall_array()
        self.gusts = self.world.gust_array()
        self.cp = np.array([self.contact.stiffness, self.contact.damping,
                            self.contact.release_fraction, float(self.contact.stations)])
        self.wg = self.gains.pack() if self.gains is not None else np.zeros(7)
        self.n_ma = max(1, int(round(self.params.period / self.dt)))

    def start(self, y0: np.ndarray):
        y = np.array(y0, float)
        self.ma_buf = np.tile(y, (self.n_ma, 1))
        self.ma_sum = self.ma_buf.sum(axis=0)
        self.ma_idx = 0
        self.k = 0
        self.y = y
        return self

    def averaged_state(self) -> np.ndarray:
        return self.ma_sum / self.n_ma

    def step_block(self, u: np.ndarray, n_steps: int):
        """Advance ``n_steps``; returns (samples, contact, misc)."""
        n_samp = n_steps // self.sample_every + 2
        samples = np.zeros((n_samp, 6))
        contact = np.zeros((2, 6))
        misc = np.array([np.inf, 0.0, 0.0, 0.0])
        self.ma_idx, ns = advance(
            self.y, self.k, n_steps, self.dt, np.asarray(u, float), self.vp, self.mp,
            self.ge_x, self.ge_cL, self.ge_cD, self.terrain, self.world.base_height,
            self.walls, self.gusts, self.cp, self.mode, self.wg, self.ma_buf, self.ma_sum,
            self.ma_idx, self.sample_every, samples, contact, misc)
        self.k += n_steps
        return samples[:ns], contact, misc

    @property
    def t(self) -> float:
        return self.k * self.dt
