"""World model: terrain, wall panels, gusts, ground effect and wing contact."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.interpolate import PchipInterpolator

from .dynamics import (HalfStroke, SIDE_SIGN, Side, VehicleParams, VehicleState, WingState)


class OutOfArena(ValueError):
    pass


@dataclass(frozen=True)
class TerrainPatch:
    """Axis-aligned patch where terrain is the plane ``a + b*x + c*y``."""

    x0: float
    x1: float
    y0: float
    y1: float
    a: float
    b: float = 0.0
    c: float = 0.0


@dataclass(frozen=True)
class Panel:
    """Vertical rectangular wall panel between two ground-plane endpoints."""

    start: tuple[float, float]
    end: tuple[float, float]
    z0: float = 0.0
    height: float = 0.6096

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass(frozen=True)
class Gust:
    t0: float
    t1: float
    wind: tuple[float, float, float]


@dataclass(frozen=True)
class World:
    bounds: tuple[float, float, float, float] = (-2.0, 2.0, -2.0, 2.0)
    base_height: float = 0.0
    terrain: tuple[TerrainPatch, ...] = ()
    walls: tuple[Panel, ...] = ()
    gusts: tuple[Gust, ...] = ()

    def height(self, x: float, y: float) -> float:
        return float(_terrain_height(x, y, self.base_height, self.terrain_array()))

    def terrain_array(self) -> np.ndarray:
        if not self.terrain:
            return np.zeros((0, 7))
        return np.array([[p.x0, p.x1, p.y0, p.y1, p.a, p.b, p.c] for p in self.terrain], float)

    def wall_array(self) -> np.ndarray:
        if not self.walls:
            return np.zeros((0, 6))
        return np.array([[w.start[0], w.start[1], w.end[0], w.end[1], w.z0, w.z0 + w.height]
                         for w in self.walls], float)

    def gust_array(self) -> np.ndarray:
        if not self.gusts:
            return np.zeros((0, 5))
        return np.array([[g.t0, g.t1, *g.wind] for g in self.gusts], float)

    def inside(self, x: float, y: float) -> bool:
        x0, x1, y0, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass(frozen=True)
class GroundEffectCurve:
    """Lift and drag multipliers versus clearance in mean chords.

    Monotone-cubic (PCHIP) through the control points.  Flat pads are added
    at both ends so the curve is C1 and exactly 1 beyond the far-field knot.
    """

    lift_points: tuple[tuple[float, float], ...] = (
        (1.5, 1.02), (2.3, 1.06), (3.3, 1.10), (4.0, 1.05), (10.0, 1.0))
    drag_points: tuple[tuple[float, float], ...] = (
        (1.5, 0.58), (2.3, 0.55), (3.3, 0.80), (4.0, 0.95), (10.0, 1.0))
    far_field: float = 10.0
    _lift: PchipInterpolator = field(init=False, repr=False, compare=False)
    _drag: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_lift", self._build(self.lift_points))
        object.__setattr__(self, "_drag", self._build(self.drag_points))

    def _build(self, pts):
        pts = sorted((float(x), float(y)) for x, y in pts)
        xs = [x for x, _ in pts]
        ys = [y for _, y in pts]
        if xs[-1] < self.far_field or abs(ys[-1] - 1.0) > 0:
            raise ValueError("last control point must sit at far field with value 1")
        lo = min(0.0, xs[0] - 1.0)
        xs = [lo] + xs + [2.0 * self.far_field]
        ys = [ys[0]] + ys + [1.0]
        return PchipInterpolator(np.array(xs), np.array(ys), extrapolate=False)

    def _eval(self, interp, x, nu=0):
        x = np.clip(np.asarray(x, float), interp.x[0], interp.x[-1])
        return interp(x, nu)

    def lift(self, d_over_c):
        return self._eval(self._lift, d_over_c)

    def drag(self, d_over_c):
        return self._eval(self._drag, d_over_c)

    def drag_slope(self, d_over_c):
        """d G_D / d(D/c) (per mean chord)."""
        return self._eval(self._drag, d_over_c, 1)

    def pack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Breakpoints and PPoly coefficients (lift, drag) for the kernels."""
        if not np.array_equal(self._lift.x, self._drag.x):
            # resample both on a common grid of breakpoints
            xs = np.union1d(self._lift.x, self._drag.x)
            L = PchipInterpolator(xs, self._lift(xs))
            D = PchipInterpolator(xs, self._drag(xs))
            return xs, np.ascontiguousarray(L.c), np.ascontiguousarray(D.c)
        return (np.ascontiguousarray(self._lift.x), np.ascontiguousarray(self._lift.c),
                np.ascontiguousarray(self._drag.c))


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _terrain_height(x, y, base, patches):
    h = base
    for k in range(patches.shape[0]):
        p = patches[k]
        if p[0] <= x < p[1] and p[2] <= y < p[3]:
            h = p[4] + p[5] * x + p[6] * y
    return h


@njit(cache=True)
def _ppoly(x, xs, c):
    n = xs.shape[0]
    if x <= xs[0]:
        x = xs[0]
    if x >= xs[n - 1]:
        x = xs[n - 1]
    i = np.searchsorted(xs, x, side="right") - 1
    if i > n - 2:
        i = n - 2
    if i < 0:
        i = 0
    dx = x - xs[i]
    return ((c[0, i] * dx + c[1, i]) * dx + c[2, i]) * dx + c[3, i]


@njit(cache=True)
def _wind(t, gusts):
    wx = wy = wz = 0.0
    for k in range(gusts.shape[0]):
        g = gusts[k]
        if g[0] <= t < g[1]:
            wx += g[2]
            wy += g[3]
            wz += g[4]
    return wx, wy, wz


@njit(cache=True)
def _wing_penetration(P, R, phi, s, r0, zw, L, walls, n_st):
    """Deepest penetration of the wing's span stations through any panel.

    Returns (pen, dpen_dphi, cx, cy, cz, nx, ny) where ``(nx, ny)`` is the
    panel normal pointing toward the body; pen is 0 when nothing crosses.
    """
    best = 0.0
    best_d = 0.0
    bcx = bcy = bcz = 0.0
    bnx = bny = 0.0
    sp, cp = math.sin(phi), math.cos(phi)
    # wing root in world
    qx = P[0] + R[0, 1] * s * r0 + R[0, 2] * zw
    qy = P[1] + R[1, 1] * s * r0 + R[1, 2] * zw
    qz = P[2] + R[2, 1] * s * r0 + R[2, 2] * zw
    for k in range(walls.shape[0]):
        ax, ay, bx, by, z0, z1 = walls[k]
        ex, ey = bx - ax, by - ay
        ln = math.sqrt(ex * ex + ey * ey)
        ex /= ln
        ey /= ln
        nx, ny = -ey, ex
        db = nx * (P[0] - ax) + ny * (P[1] - ay)
        if db == 0.0:
            continue
        sb = 1.0 if db > 0 else -1.0
        dq = sb * (nx * (qx - ax) + ny * (qy - ay))
        for j in range(1, n_st + 1):
            l = L * j / n_st
            bxw, byw = l * sp, s * l * cp
            px = qx + R[0, 0] * bxw + R[0, 1] * byw
            py = qy + R[1, 0] * bxw + R[1, 1] * byw
            pz = qz + R[2, 0] * bxw + R[2, 1] * byw
            dp = sb * (nx * (px - ax) + ny * (py - ay))
            if dp >= 0.0 or dq <= 0.0:
                continue
            a = dq / (dq - dp)
            cx = qx + a * (px - qx)
            cy = qy + a * (py - qy)
            cz = qz + a * (pz - qz)
            along = (cx - ax) * ex + (cy - ay) * ey
            if along < 0.0 or along > ln or cz < z0 or cz > z1:
                continue
            pen = -dp
            if pen > best:
                dbx, dby = l * cp, -s * l * sp
                dwx = R[0, 0] * dbx + R[0, 1] * dby
                dwy = R[1, 0] * dbx + R[1, 1] * dby
                best = pen
                best_d = -sb * (nx * dwx + ny * dwy)
                bcx, bcy, bcz = px, py, pz
                bnx, bny = sb * nx, sb * ny
    return best, best_d, bcx, bcy, bcz, bnx, bny


@njit(cache=True)
def _contact_load(pen, dpen_dphi, phid, body_rate, k_c, c_c, beta):
    """Normal force and stroke-axis load torque of a wing in contact.

    While the wing moves into the panel the contact acts as a spring-damper;
    on the way out the flexible wing releases most of its stored energy in
    its own membrane, leaving a ``beta`` fraction as rubbing load.  The load
    torque always opposes the stroke velocity.
    """
    if pen <= 0.0:
        return 0.0, 0.0
    pen_rate = dpen_dphi * phid + body_rate
    if pen_rate > 0.0:
        fn = k_c * pen + c_c * pen_rate
    else:
        fn = beta * k_c * pen
    if fn < 0.0:
        fn = 0.0
    sgn = 1.0 if phid >= 0.0 else -1.0
    return fn, sgn * fn * abs(dpen_dphi)


# ---------------------------------------------------------------------------
# public operations


@dataclass(frozen=True)
class ContactParams:
    """Wing-panel spring-damper.  The default stiffness is the value the
    contact calibration settles on for the default vehicle."""

    stiffness: float = 16.714
    damping: float = 1.6714e-3
    release_fraction: float = 0.1
    stations: int = 4


@dataclass(frozen=True)
class ContactEvent:
    wing: Side
    half_stroke: HalfStroke
    contact_point: tuple[float, float, float]
    penetration: float
    t: float


def ground_clearance(P, world: World) -> float:
    x, y, z = (float(c) for c in P)
    if not world.inside(x, y):
        raise OutOfArena(f"position ({x:.3f}, {y:.3f}) is outside the arena {world.bounds}")
    return max(0.0, z - world.height(x, y))


def ground_effect(d_over_c: float, curve: GroundEffectCurve) -> tuple[float, float]:
    if d_over_c < 0:
        raise ValueError("clearance ratio must be non-negative")
    return float(curve.lift(d_over_c)), float(curve.drag(d_over_c))


def wind_at(t: float, P, world: World) -> np.ndarray:
    return np.array(_wind(float(t), world.gust_array()))


def wing_contact(state: VehicleState, wing: WingState, world: World,
                 params: VehicleParams | None = None, contact: ContactParams | None = None,
                 t: float = 0.0) -> tuple[ContactEvent | None, float]:
    """Wing-panel contact for one wing at its current stroke angle.

    Returns the contact event (or None) and the load torque the contact
    puts on that wing's stroke axis.
    """
    p = params or VehicleParams()
    c = contact or ContactParams()
    s = SIDE_SIGN[0 if wing.side == Side.LEFT else 1]
    pen, dpen, cx, cy, cz, nx, ny = _wing_penetration(
        np.asarray(state.P, float), np.asarray(state.R, float), wing.phi_w, s,
        p.root_offset, p.stroke_plane_height, p.wing_length, world.wall_array(), c.stations)
    if pen <= 0.0:
        return None, 0.0
    body_rate = -(nx * state.v[0] + ny * state.v[1])
    _, tau = _contact_load(pen, dpen, wing.phi_w_dot, body_rate, c.stiffness, c.damping,
                           c.release_fraction)
    return ContactEvent(wing.side, wing.half_stroke, (cx, cy, cz), pen, t), tau


def panel_distance(point_xy, panel: Panel) -> float:
    """Distance from a ground-plane point to the panel's line segment."""
    a = np.asarray(panel.start, float)
    b = np.asarray(panel.end, float)
    p = np.asarray(point_xy, float)
    e = b - a
    u = np.clip(np.dot(p - a, e) / np.dot(e, e), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + u * e)))


def crosses_panel(p0, p1, panel: Panel) -> bool:
    """Whether the ground-plane segment p0 -> p1 crosses the panel."""
    a = np.asarray(panel.start, float)
    b = np.asarray(panel.end, float)
    p0 = np.asarray(p0, float)[:2]
    p1 = np.asarray(p1, float)[:2]

    def orient(u, v, w):
        return (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])

    d1, d2 = orient(a, b, p0), orient(a, b, p1)
    d3, d4 = orient(p0, p1, a), orient(p0, p1, b)
    return d1 * d2 < 0 and d3 * d4 < 0


def corridor_walls(centerline: Sequence[tuple[float, float]], width: float,
                   height: float = 0.6096, cap_start: bool = True,
                   cap_end: bool = True) -> tuple[Panel, ...]:
    """Two parallel wall chains offset half a width either side of a polyline."""
    pts = np.asarray(centerline, float)
    h = 0.5 * width
    dirs = np.diff(pts, axis=0)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    normals = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)

    def offset_chain(sign):
        out = [pts[0] + sign * h * normals[0]]
        for k in range(1, len(pts) - 1):
            # miter joint
            n = normals[k - 1] + normals[k]
            n /= np.linalg.norm(n)
            scale = h / np.dot(n, normals[k])
            out.append(pts[k] + sign * scale * n)
        out.append(pts[-1] + sign * h * normals[-1])
        return out

    panels = []
    for sign in (1.0, -1.0):
        chain = offset_chain(sign)
        for p, q in zip(chain[:-1], chain[1:]):
            panels.append(Panel(tuple(p), tuple(q), 0.0, height))
    left = offset_chain(1.0)
    right = offset_chain(-1.0)
    if cap_start:
        panels.append(Panel(tuple(right[0]), tuple(left[0]), 0.0, height))
    if cap_end:
        panels.append(Panel(tuple(left[-1]), tuple(right[-1]), 0.0, height))
    return tuple(panels)
