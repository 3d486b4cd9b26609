"""Navigation layer: terrain following from current feedback, dead
reckoning, the retreat/shift avoidance machine and map building."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control import References
from .environment import GroundEffectCurve
from .sensing import ABOVE_BAND, BELOW_BAND, IN_BAND, ClearanceFeedback, CollisionEvent

SEARCH_GROUND, CRUISE, RETREAT, SHIFT, RESUME, DONE = (
    "search_ground", "cruise", "retreat", "shift", "resume", "done")

TRANSITIONS = {
    SEARCH_GROUND: {SEARCH_GROUND, CRUISE, DONE},
    CRUISE: {CRUISE, RETREAT, RESUME, DONE},
    RETREAT: {RETREAT, SHIFT, CRUISE, DONE},
    SHIFT: {SHIFT, CRUISE, DONE},
    RESUME: {RESUME, CRUISE, RETREAT, DONE},
    DONE: {DONE},
}

# unit obstacle bearings in the body frame (x forward, y left)
_S = math.sqrt(0.5)
BEARINGS = {
    "front": (1.0, 0.0), "back": (-1.0, 0.0),
    "front-left": (_S, _S), "back-left": (-_S, _S),
    "front-right": (_S, -_S), "back-right": (-_S, -_S),
}


class InvalidTransition(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# dead reckoning


@dataclass(frozen=True)
class DeadReckonPose:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    k: int = 0

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.psi), math.sin(self.psi)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])


def dead_reckon(prev: DeadReckonPose, psi: float, p_b) -> DeadReckonPose:
    """Homogeneous-transform update: rotate the body displacement by the
    current heading and add it to the previous position."""
    c, s = math.cos(psi), math.sin(psi)
    xb, yb = float(p_b[0]), float(p_b[1])
    return DeadReckonPose(prev.x + c * xb - s * yb, prev.y + s * xb + c * yb, psi, prev.k + 1)


def invert_step(pose: DeadReckonPose, prev_psi: float, p_b) -> DeadReckonPose:
    """Undo :func:`dead_reckon`; ``prev_psi`` restores the earlier heading."""
    c, s = math.cos(pose.psi), math.sin(pose.psi)
    xb, yb = float(p_b[0]), float(p_b[1])
    return DeadReckonPose(pose.x - (c * xb - s * yb), pose.y - (s * xb + c * yb), prev_psi,
                          pose.k - 1)


def compose_steps(start: DeadReckonPose, psis: Sequence[float], steps) -> DeadReckonPose:
    """Single transform equivalent to applying every step in turn."""
    steps = np.asarray(steps, float).reshape(-1, 2)
    psis = np.asarray(psis, float)
    dx = np.cos(psis) * steps[:, 0] - np.sin(psis) * steps[:, 1]
    dy = np.sin(psis) * steps[:, 0] + np.cos(psis) * steps[:, 1]
    return DeadReckonPose(start.x + math.fsum(dx), start.y + math.fsum(dy),
                          float(psis[-1]) if len(psis) else start.psi, start.k + len(psis))


# ---------------------------------------------------------------------------
# terrain following


def terrain_feedforward(fb: ClearanceFeedback, K_zhat: float, tilt: float = 0.0,
                        tilt_limit: float = 0.15) -> tuple[float, bool]:
    """Reference altitude increment from the current excess.

    Returns ``(delta_z_r, valid)``.  High current means too much clearance,
    so a positive excess lowers the reference.  With the vehicle tilted
    beyond ``tilt_limit`` the feedback is not trusted and nothing moves.
    """
    if abs(tilt) > tilt_limit:
        return 0.0, False
    if fb.band == IN_BAND:
        return 0.0, True
    return -K_zhat * fb.mean_excess, True


def relative_drag_slope(curve: GroundEffectCurve, d_over_c: float = 3.3) -> float:
    """Relative change of drag multiplier per mean chord at ``d_over_c``."""
    return float(curve.drag_slope(d_over_c) / curve.drag(d_over_c))


def clearance_from_ratio(ratio, curve: GroundEffectCurve, mean_chord: float,
                         ref: float = 3.3, branch: tuple[float, float] = (2.3, 10.0)):
    """Clearance whose drag multiplier, relative to the one at ``ref``, is
    ``ratio``; the curve is inverted on its monotone branch."""
    xs = np.linspace(branch[0], branch[1], 2001)
    g = curve.drag(xs) / curve.drag(ref)
    r = np.clip(np.asarray(ratio, float), g[0], g[-1])
    return np.interp(r, g, xs) * mean_chord


# ---------------------------------------------------------------------------
# map


@dataclass
class MapEstimate:
    run_id: str = "run"
    seed: int = 0
    terrain: list = field(default_factory=list)  # (x, y, h)
    obstacles: list = field(default_factory=list)  # (x, y, heading, signature)

    def add_terrain(self, x: float, y: float, h: float):
        self.terrain.append((float(x), float(y), float(h)))

    def add_obstacle(self, x: float, y: float, heading: float, signature: str):
        self.obstacles.append((float(x), float(y), float(heading), str(signature)))

    def remove_last_obstacle(self):
        if self.obstacles:
            self.obstacles.pop()

    def rows(self):
        for x, y, h in self.terrain:
            yield ("terrain", x, y, h, "", "", self.run_id)
        for x, y, hd, sig in self.obstacles:
            yield ("obstacle", x, y, "", hd, sig, self.run_id)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "x", "y", "value", "heading", "signature", "run_id"])
        for row in self.rows():
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "MapEstimate":
        m = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                m.run_id = row["run_id"]
                if row["kind"] == "terrain":
                    m.add_terrain(float(row["x"]), float(row["y"]), float(row["value"]))
                else:
                    m.add_obstacle(float(row["x"]), float(row["y"]), float(row["heading"]),
                                   row["signature"])
        return m

    def obstacle_xy(self) -> np.ndarray:
        return np.array([(o[0], o[1]) for o in self.obstacles], float).reshape(-1, 2)

    def terrain_xyz(self) -> np.ndarray:
        return np.array(self.terrain, float).reshape(-1, 3)


def distinct_points(points, cell: float = 0.01) -> set:
    """Obstacle points quantised to a ``cell`` grid."""
    pts = np.asarray(points, float).reshape(-1, 2)
    return {(int(a), int(b)) for a, b in np.floor(pts / cell)}


def merge_maps(maps: Sequence[MapEstimate], run_id: str = "union") -> MapEstimate:
    out = MapEstimate(run_id)
    for m in maps:
        out.terrain.extend(m.terrain)
        out.obstacles.extend(m.obstacles)
    return out


# ---------------------------------------------------------------------------
# route geometry


@dataclass(frozen=True)
class Route:
    waypoints: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.waypoints, float).reshape(-1, 2)
        if len(w) < 2:
            raise ValueError("route needs at least two waypoints")
        seg = np.diff(w, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lens <= 0):
            raise ValueError("route has a zero-length segment")
        object.__setattr__(self, "waypoints", w)
        object.__setattr__(self, "_len", lens)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(lens)]))

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def segment_at(self, s: float) -> int:
        return int(min(max(np.searchsorted(self._cum, s, side="right") - 1, 0),
                       len(self._len) - 1))

    def direction(self, i: int) -> np.ndarray:
        d = self.waypoints[i + 1] - self.waypoints[i]
        return d / self._len[i]

    def heading(self, i: int) -> float:
        d = self.direction(i)
        return math.atan2(d[1], d[0])

    def point(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = self.segment_at(s)
        return self.waypoints[i] + (s - self._cum[i]) * self.direction(i)

    def project(self, p, near: float | None = None, window: float = 0.3) -> float:
        """Arc length of the closest route point, optionally searched only
        within ``window`` of ``near`` so corners do not cause jumps."""
        p = np.asarray(p, float)[:2]
        best, best_d = 0.0, math.inf
        for i in range(len(self._len)):
            a, d = self.waypoints[i], self.direction(i)
            t = min(max(float((p - a) @ d), 0.0), self._len[i])
            s = self._cum[i] + t
            if near is not None and abs(s - near) > window:
                continue
            dist = float(np.hypot(*(a + t * d - p)))
            if dist < best_d:
                best, best_d = s, dist
        return best if best_d < math.inf else (near or 0.0)


# ---------------------------------------------------------------------------
# navigator


@dataclass(frozen=True)
class NavConfig:
    route: tuple = ((0.0, 0.0), (1.0, 0.0))
    cruise_speed: float = 0.1
    lead: float = 0.04
    retreat_distance: float = 0.10
    shift_step: float = 0.08
    K_zhat: float = 0.2
    dz_limit: float = 0.004  # largest reference change per wingbeat, m
    z_filter_hz: float = 1.5
    tilt_valid: float = 0.15
    goal_tolerance: float = 0.03
    arrive_tolerance: float = 0.02
    bypass_margin: float = 0.05
    resume_rate: float = 0.05  # m/s of offset decay back onto the route
    yaw_rate: float = 1.5
    settle_beats: int = 3
    gust_persist_fraction: float = 0.5
    max_offset: float = 0.5
    phase_timeout: float = 4.0
    mean_chord: float = 0.0212
    wing_length: float = 0.085
    map_terrain: bool = True


@dataclass
class NavState:
    mode: str
    route: Route
    segment: int = 0
    shift_offset: float = 0.0
    retreat_budget: float = 0.0
    K_zhat: float = 0.2
    progress: float = 0.0
    cycles: int = 0
    aborted: bool = False


class Navigator:
    """Mode machine producing controller references once per control period
    and consuming wingbeat statistics and collision events."""

    def __init__(self, cfg: NavConfig, z0: float, curve: GroundEffectCurve,
                 map_estimate: MapEstimate | None = None, start_mode: str = SEARCH_GROUND,
                 arena=None):
        self.cfg = cfg
        self.route = Route(np.asarray(cfg.route, float))
        self.state = NavState(start_mode, self.route, K_zhat=cfg.K_zhat,
                              retreat_budget=cfg.retreat_distance)
        self.curve = curve
        self.map = map_estimate if map_estimate is not None else MapEstimate()
        self.arena = arena
        self.z_cmd = z0
        self._z = np.array([z0, 0.0])  # filtered reference and its rate
        self._z_acc = 0.0
        self.s_ref = 0.0
        self.psi_r = self.route.heading(0)
        self._target = None
        self._leg_start = None
        self._phase_t0 = 0.0
        self._settle = 0
        self._bump_s = None
        self._event_pose = None
        self._event_sig = None
        self._encounter_side = None
        self._next_side = 1.0  # front/back encounters alternate, left first
        self._retreat_dir = np.zeros(2)
        self.transitions: list[tuple[float, str, str]] = []
        self.gusts = 0
        self.terrain_flag = True

    # -- state graph -------------------------------------------------------
    @property
    def mode(self) -> str:
        return self.state.mode

    def _set_mode(self, t: float, mode: str):
        old = self.state.mode
        if mode not in TRANSITIONS[old]:
            raise InvalidTransition(f"{old} -> {mode}")
        if mode != old:
            self.transitions.append((t, old, mode))
            self._phase_t0 = t
        self.state.mode = mode

    # -- references --------------------------------------------------------
    def _carrot(self, s: float) -> np.ndarray:
        i = self.route.segment_at(s)
        d = self.route.direction(i)
        n = np.array([-d[1], d[0]])
        return self.route.point(s) + self.state.shift_offset * n

    def _normal(self) -> np.ndarray:
        d = self.route.direction(self.state.segment)
        return np.array([-d[1], d[0]])

    def references(self, t: float, dt: float, pose_xy, psi: float) -> References:
        cfg, st = self.cfg, self.state
        p = np.asarray(pose_xy, float)
        s_proj = self.route.project(p, near=st.progress)
        st.progress = s_proj
        st.segment = self.route.segment_at(s_proj)
        v_ref = np.zeros(2)
        if st.mode in (CRUISE, RESUME):
            if st.mode == RESUME:
                step = cfg.resume_rate * dt
                st.shift_offset = math.copysign(max(abs(st.shift_offset) - step, 0.0),
                                                st.shift_offset)
                if st.shift_offset == 0.0:
                    self._set_mode(t, CRUISE)
                    self._bump_s = None
                    self._encounter_side = None
            elif self._bump_s is not None and s_proj > self._bump_s:
                self._set_mode(t, RESUME)
            self.s_ref = min(self.s_ref + cfg.cruise_speed * dt, s_proj + cfg.lead,
                             self.route.length)
            xy = self._carrot(self.s_ref)
            if self.s_ref < self.route.length:
                v_ref = cfg.cruise_speed * self.route.direction(self.route.segment_at(self.s_ref))
            goal = self._carrot(self.route.length)
            if (self.s_ref >= self.route.length
                    and np.hypot(*(p - goal)) < cfg.goal_tolerance):
                self._set_mode(t, DONE)
        elif st.mode in (RETREAT, SHIFT):
            # the reference slides toward the target at cruise speed; a step
            # would saturate the pitch channel and swing the stroke forward
            xy, v_ref = self._leg_reference(t)
            arrived = (np.hypot(*(p - self._target)) < cfg.arrive_tolerance
                       and np.array_equal(xy, self._target))
            if arrived or t - self._phase_t0 > cfg.phase_timeout:
                self._finish_phase(t, p)
                if st.mode == SHIFT:
                    xy, v_ref = self._leg_reference(t)
                else:
                    xy, v_ref = self._carrot(self.s_ref), np.zeros(2)
        elif st.mode == DONE:
            xy = self._carrot(self.route.length)
        else:
            xy = self._target if self._target is not None else p.copy()
            if self._target is None:
                self._target = p.copy()
        # heading follows the segment the reference lies on; it is held
        # while avoiding so the bump bearing stays meaningful
        if st.mode not in (RETREAT, SHIFT):
            want = self.route.heading(self.route.segment_at(self.s_ref))
            err = math.remainder(want - self.psi_r, 2 * math.pi)
            self.psi_r += max(-cfg.yaw_rate * dt, min(cfg.yaw_rate * dt, err))
        self._advance_z(dt)
        return References(self._z[0], self._z[1], self._z_acc, (float(xy[0]), float(xy[1])),
                          (float(v_ref[0]), float(v_ref[1])), self.psi_r)

    def _leg_reference(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        d = self._target - self._leg_start
        dist = float(np.hypot(*d))
        run = self.cfg.cruise_speed * (t - self._phase_t0)
        if dist == 0.0 or run >= dist:
            return self._target.copy(), np.zeros(2)
        u = d / dist
        return self._leg_start + run * u, self.cfg.cruise_speed * u

    def _advance_z(self, dt: float):
        # critically damped second-order reference filter keeps z_r smooth
        w = 2 * math.pi * self.cfg.z_filter_hz
        z, zd = self._z
        acc = w * w * (self.z_cmd - z) - 2 * w * zd
        zd += acc * dt
        z += zd * dt
        self._z = np.array([z, zd])
        self._z_acc = acc

    # -- wingbeat inputs ---------------------------------------------------
    def on_beat(self, t: float, fb: ClearanceFeedback | None, pose, tilt: float):
        """Apply terrain feedforward and record a terrain sample.

        ``pose`` is (x, y, z, psi) from the active position source.
        """
        cfg, st = self.cfg, self.state
        if fb is None:
            return
        dz, valid = terrain_feedforward(fb, st.K_zhat, tilt, cfg.tilt_valid)
        self.terrain_flag = valid
        if not valid:
            return
        dz = max(-cfg.dz_limit, min(cfg.dz_limit, dz))
        self.z_cmd += dz
        if st.mode == SEARCH_GROUND:
            self._settle = self._settle + 1 if fb.band == IN_BAND else 0
            if self._settle >= cfg.settle_beats:
                self._set_mode(t, CRUISE)
                self.s_ref = self.route.project(pose[:2])
        elif cfg.map_terrain and st.mode in (CRUISE, RESUME, SHIFT, RETREAT):
            self.map.add_terrain(pose[0], pose[1], pose[2] - self._clearance(fb))

    def _clearance(self, fb: ClearanceFeedback) -> float:
        return float(np.mean(clearance_from_ratio(fb.ratio, self.curve, self.cfg.mean_chord)))

    def obstacle_point(self, event: CollisionEvent, pose, strokes) -> np.ndarray:
        """World position of the contacting wingtip(s) for an event.

        ``strokes`` holds (amplitude, offset) per wing; each contacting tip
        is placed where its stroke arc reaches furthest toward the bearing.
        """
        x, y, _, psi = pose
        bx, by = BEARINGS[event.direction]
        wings = (0, 1) if event.signature.startswith("both") else (
            (0,) if event.signature.startswith("L") else (1,))
        L = self.cfg.wing_length
        pts = []
        for w in wings:
            amp, off = strokes[w]
            sgn = 1.0 if w == 0 else -1.0
            phi = min(max(math.atan2(bx, sgn * by), off - amp), off + amp)
            pts.append((L * math.sin(phi), sgn * L * math.cos(phi)))
        b = np.mean(pts, axis=0)
        c, s = math.cos(psi), math.sin(psi)
        return np.array([x + c * b[0] - s * b[1], y + s * b[0] + c * b[1]])

    def on_event(self, t: float, event: CollisionEvent, pose, strokes):
        """React to a classified collision seen at ``pose`` (x, y, z, psi)."""
        cfg, st = self.cfg, self.state
        if event.direction is None or st.mode in (SEARCH_GROUND, DONE):
            return
        pt = self.obstacle_point(event, pose, strokes)
        if st.mode in (RETREAT, SHIFT):
            # contact while already avoiding: keep the point, keep the plan
            self.map.add_obstacle(pt[0], pt[1], pose[3], event.signature)
            return
        self.map.add_obstacle(pt[0], pt[1], pose[3], event.signature)
        psi = pose[3]
        c, s = math.cos(psi), math.sin(psi)
        bx, by = BEARINGS[event.direction]
        away = -np.array([c * bx - s * by, s * bx + c * by])
        self._retreat_dir = away
        self._event_pose = np.array(pose[:2], float)
        self._event_sig = event.signature if event.gust_possible else None
        self._target = self._event_pose + cfg.retreat_distance * away
        self._leg_start = self._event_pose.copy()
        self._bump_s = self.route.project(pt, near=st.progress) + cfg.bypass_margin
        # side for the next shift, in route-normal terms (+1 = left of route)
        d = self.route.direction(st.segment)
        lateral = float(np.array([-d[1], d[0]]) @ (pt - self._event_pose))
        if event.signature in ("both-up", "both-down"):
            if self._encounter_side is None:
                self._encounter_side = self._next_side
                self._next_side = -self._next_side
            side = self._encounter_side
        else:
            side = -1.0 if lateral > 0 else 1.0
        self._pending_side = side
        st.cycles += 1
        self._set_mode(t, RETREAT)

    def gust_check(self, t: float, pose, active_signature: str | None):
        """Reclassify a front/back bump as a gust when the same signature is
        still raised after most of the retreat."""
        cfg, st = self.cfg, self.state
        if st.mode != RETREAT or self._event_sig is None or active_signature != self._event_sig:
            return False
        moved = float(np.hypot(*(np.asarray(pose[:2]) - self._event_pose)))
        if moved < cfg.gust_persist_fraction * cfg.retreat_distance:
            return False
        self.map.remove_last_obstacle()
        self.gusts += 1
        st.cycles -= 1
        self._bump_s = None
        self._event_sig = None
        self._set_mode(t, CRUISE)
        self.s_ref = st.progress
        return True

    def _finish_phase(self, t: float, p):
        cfg, st = self.cfg, self.state
        if st.mode == RETREAT:
            new = st.shift_offset + self._pending_side * cfg.shift_step
            if abs(new) > cfg.max_offset or (self.arena is not None
                                            and not self.arena(*self._shifted(new))):
                st.aborted = True
                self._set_mode(t, DONE)
                return
            st.shift_offset = new
            self.s_ref = self.route.project(p, near=st.progress)
            self._target = self._carrot(self.s_ref)
            self._leg_start = np.asarray(p, float).copy()
            self._set_mode(t, SHIFT)
        else:
            self._set_mode(t, CRUISE)

    def _shifted(self, offset: float):
        return self.route.point(self.state.progress) + offset * self._normal()
