"""Closed-loop scenario runs: physics, control, sensing and navigation at
their own rates, with trace, map and report output."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..actuation import SAMPLE_RATE
from ..control import FlightController, References
from ..dynamics import ControlInput, VehicleState, calibrate_wrench_gains, channel_scale
from ..engine import (FREE, M_GROUND, M_MAX_PEN, M_MIN_D, M_WALL_CROSS, PhysicsModel, S_IL,
                      S_IR, S_T, S_UPL, S_UPR)
from ..environment import panel_distance
from ..navigation import DONE, DeadReckonPose, MapEstimate, Navigator, dead_reckon
from ..sensing import (BeatAccumulator, CollisionDetector, LowPassFilter, ThresholdModel,
                       clearance_feedback, group_delay_samples, threshold_at)
from . import calibration as cal
from .config import ScenarioConfig
from .io import write_array_csv, write_csv, write_toml, write_world

CONTROL_RATE = 500.0

STATE_COLS = ["t", "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz",
              "x_est", "y_est", "z_r", "x_r", "y_r", "psi_r", "V_s", "dV", "V_b", "sigma",
              "s_z", "clamped", "clearance", "dead_reckoning", "mode"]
CURRENT_COLS = ["t", "i_L", "i_R", "f_L", "f_R", "up_L", "up_R"]
STAT_COLS = ["beat", "t", "mean_L", "up_L", "down_L", "mean_R", "up_R", "down_R", "thr_L",
             "thr_R", "ratio_L", "ratio_R", "band", "excess_L", "excess_R", "V_s"]
EVENT_COLS = ["t", "signature", "direction", "gust_possible", "x", "y", "heading", "r_L_up",
              "r_L_down", "r_R_up", "r_R_down", "action"]


@dataclass
class Calibrated:
    """Quantities a flight needs from the calibration protocols."""

    thresholds: ThresholdModel
    contact: object
    noise_sigma: float


_CAL_CACHE: dict = {}


def prepare(cfg: ScenarioConfig) -> Calibrated:
    """Run (or reuse) the calibrations a scenario asks for."""
    key = repr((cfg.vehicle, cfg.motor, cfg.curve, cfg.contact, cfg.calibrate_contact,
                cfg.sensing.thresholds, cfg.sensing.noise_fraction, cfg.calibration))
    if key in _CAL_CACHE:
        return _CAL_CACHE[key]
    bench = cal.Bench.from_config(cfg)
    cc = cfg.calibration
    contact = cfg.contact
    if cfg.calibrate_contact:
        contact = cal.calibrate_contact_stiffness(bench, cc.contact_rise, 12.0,
                                                  cc.contact_penetration, cc.reference_clearance)
        bench = replace(bench, contact=contact)
    sigma = cfg.sensing.noise_fraction * cal.hover_current(bench, cc.reference_clearance)
    if cfg.sensing.thresholds is None:
        model, _ = cal.threshold_protocol(bench, cc.voltages, cc.datasets, cc.beats,
                                          cc.reference_clearance, cfg.sensing.noise_fraction,
                                          seed=0)
    else:
        model = ThresholdModel(*cfg.sensing.thresholds)
    out = Calibrated(model, contact, sigma)
    _CAL_CACHE[key] = out
    return out


@dataclass
class RunResult:
    report: dict
    passed: bool
    map: MapEstimate
    events: list
    runtime: float
    out_dir: Path | None = None
    states: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)


def _in_zone(x, y, zones) -> bool:
    return any(x0 <= x <= x1 and y0 <= y <= y1 for x0, x1, y0, y1 in zones)


def _split_factor(frac: float) -> float:
    # cycle-mean drag scale of a split stroke relative to an even one
    return 0.25 / frac + 0.25 / (1.0 - frac)


class Simulation:
    """One scenario run.  Construct, then call :meth:`run`."""

    def __init__(self, cfg: ScenarioConfig, calibrated: Calibrated | None = None):
        self.cfg = cfg
        self.cal = calibrated or prepare(cfg)
        p = cfg.vehicle
        self.params = p
        self.wrench = calibrate_wrench_gains(p)
        self.model = PhysicsModel(p, cfg.motor, cfg.world, cfg.curve, self.cal.contact,
                                  gains=self.wrench, mode=FREE)
        self.steps = int(round(1.0 / CONTROL_RATE / self.model.dt))
        self.ctrl = FlightController(p, self.wrench, cfg.control, dt=1.0 / CONTROL_RATE)
        self.map = MapEstimate(cfg.name, cfg.seed)
        self.nav = Navigator(cfg.nav, cfg.start[2], cfg.curve, self.map,
                             arena=cfg.world.inside)
        self.rng = np.random.default_rng(cfg.seed)
        self.lp = LowPassFilter(cfg.sensing.cutoff)
        self.beats = BeatAccumulator(p.wingbeat_hz, SAMPLE_RATE,
                                     flag_delay=group_delay_samples(cfg.sensing.cutoff))
        self.detector = CollisionDetector(cfg.sensing.rel_threshold,
                                          cfg.sensing.baseline_beats, debounce=cfg.sensing.debounce)

    def run(self, out_dir: Path | None = None) -> RunResult:
        cfg, p, nav = self.cfg, self.params, self.nav
        wall0 = time.perf_counter()
        start = np.array(cfg.start, float)
        if cfg.start_jitter > 0:
            # separate stream so the sensor noise sequence does not depend on it
            jit = np.random.default_rng([cfg.seed, 1])
            start[:2] += jit.uniform(-cfg.start_jitter, cfg.start_jitter, 2)
        y0 = VehicleState.hover(start, cfg.start_yaw).to_vector()
        v_bias = np.random.default_rng([cfg.seed, 2]).normal(0.0, cfg.velocity_bias, 2)
        self.model.start(y0)
        nav.psi_r = cfg.start_yaw
        dt_c = 1.0 / CONTROL_RATE
        n_periods = int(round(cfg.duration * CONTROL_RATE))
        dr = DeadReckonPose(start[0], start[1], cfg.start_yaw)
        dr_active = False
        dr_periods = 0
        states, cur_rows, stat_rows, events = [], [], [], []
        u_acc, u_n = np.zeros(4), 0
        crash = None
        max_pen = 0.0
        min_clear = math.inf
        pos_err_max = 0.0
        done_at = None
        for k in range(n_periods):
            t = self.model.t
            y_true = self.model.y.copy()
            est = self.model.averaged_state()
            R = est[6:15].reshape(3, 3)
            psi = math.atan2(R[1, 0], R[0, 0])
            # position source: truth, or dead reckoning inside denied zones
            if _in_zone(y_true[0], y_true[1], cfg.denied_zones):
                if not dr_active:
                    dr = DeadReckonPose(est[0], est[1], psi, dr.k)
                    dr_active = True
                c, s = math.cos(psi), math.sin(psi)
                vb = np.array([c * est[3] + s * est[4], -s * est[3] + c * est[4]])
                vb += v_bias + self.rng.normal(0.0, cfg.velocity_noise, 2)
                dr = dead_reckon(dr, psi, vb * dt_c)
                dr_periods += 1
                xy = np.array([dr.x, dr.y])
            else:
                dr_active = False
                xy = est[:2].copy()
            pos_err_max = max(pos_err_max, float(np.hypot(*(xy - est[:2]))))
            ctrl_state = est.copy()
            ctrl_state[:2] = xy
            refs = nav.references(t, dt_c, xy, psi)
            u = self.ctrl.step(ctrl_state, refs)
            ua = u.as_array()
            samples, contact, misc = self.model.step_block(ua, self.steps)
            max_pen = max(max_pen, misc[M_MAX_PEN])
            min_clear = min(min_clear, misc[M_MIN_D])
            u_acc += ua
            u_n += 1
            if k % cfg.log_every == 0:
                st = VehicleState.from_vector(self.model.y)
                states.append([t, *st.P, *st.v, st.roll, st.pitch, st.yaw, *st.omega_b,
                               xy[0], xy[1], refs.z_r, refs.xy_r[0], refs.xy_r[1], refs.psi_r,
                               *ua, self.ctrl.log.s_z, any(self.ctrl.log.clamped),
                               samples[0, 5] if len(samples) else math.nan, dr_active,
                               nav.mode])
            if misc[M_GROUND] > 0:
                crash = "ground"
            elif misc[M_WALL_CROSS] > 0:
                crash = "wall"
            elif not cfg.world.inside(self.model.y[0], self.model.y[1]):
                crash = "arena"
            elif not np.all(np.isfinite(self.model.y)):
                crash = "diverged"
            if len(samples):
                raw = samples[:, [S_IL, S_IR]] + self.rng.normal(0.0, self.cal.noise_sigma,
                                                                   (len(samples), 2))
                filt = self.lp.process(raw)
                up = samples[:, [S_UPL, S_UPR]]
                for j in range(len(samples)):
                    cur_rows.append((samples[j, S_T], raw[j, 0], raw[j, 1], filt[j, 0],
                                     filt[j, 1], up[j, 0], up[j, 1]))
                fr = (0.5 + ua[3], 0.5 - ua[3])
                for kb, stats in self.beats.push(samples[:, S_T], filt, up > 0.5, fr):
                    ub = ControlInput(*(u_acc / max(u_n, 1)))
                    u_acc[:], u_n = 0.0, 0
                    self._on_beat(kb, stats, ub, xy, psi, stat_rows, events)
            if crash:
                break
            if nav.mode == DONE:
                if done_at is None:
                    done_at = t
                elif t - done_at > 0.5:
                    break
        runtime = time.perf_counter() - wall0
        result = self._report(states, events, crash, max_pen, min_clear, dr_periods,
                              done_at, runtime, pos_err_max)
        result.states = np.array([r[:-1] for r in states], float) if states else None
        if out_dir is not None:
            self._write(Path(out_dir), states, cur_rows, stat_rows, events, result)
        return result

    # -- per wingbeat ------------------------------------------------------
    def _on_beat(self, kb, stats, ub: ControlInput, xy, psi, stat_rows, events):
        cfg, p, nav = self.cfg, self.params, self.nav
        t = (kb + 1) / p.wingbeat_hz
        z = self.model.averaged_state()[2]
        R = self.model.averaged_state()[6:15].reshape(3, 3)
        tilt = math.acos(max(-1.0, min(1.0, R[2, 2])))
        VL, VR = ub.V_s + 0.5 * ub.dV, ub.V_s - 0.5 * ub.dV
        split = (_split_factor(0.5 + ub.sigma), _split_factor(0.5 - ub.sigma))
        fb = clearance_feedback(stats, (VL, VR), self.cal.thresholds, cfg.sensing.deadband,
                                split)
        thr = threshold_at_quiet((VL, VR), self.cal.thresholds)
        pose = (float(xy[0]), float(xy[1]), float(z), psi)
        nav.on_beat(t, fb, pose, tilt)
        scale = channel_scale(ub, p)
        ev = self.detector.update(stats, t, (xy[0], xy[1], z), psi, scale)
        stat_rows.append((kb, t, stats.mean_L, stats.up_L, stats.down_L, stats.mean_R,
                          stats.up_R, stats.down_R, thr[0], thr[1], fb.ratio[0], fb.ratio[1],
                          fb.band, fb.excess[0], fb.excess[1], ub.V_s))
        if ev is not None:
            mode_before = nav.mode
            amp = p.amplitude_gain
            strokes = ((amp * VL, -p.bias_gain * ub.V_b), (amp * VR, -p.bias_gain * ub.V_b))
            nav.on_event(t, ev, pose, strokes)
            action = "ignored" if ev.direction is None else (
                "avoid" if nav.mode != mode_before else "recorded")
            events.append((t, ev.signature, ev.direction or "", ev.gust_possible, pose[0],
                           pose[1], psi, *ev.ratios, action))
        pending = self.detector._pending if self.detector.active else None
        if nav.gust_check(t, pose, pending):
            events.append((t, pending, "", True, pose[0], pose[1], psi, *([math.nan] * 4),
                           "gust"))

    # -- report ------------------------------------------------------------
    def _report(self, states, events, crash, max_pen, min_clear, dr_periods, done_at,
                runtime, pos_err_max) -> RunResult:
        cfg, nav = self.cfg, self.nav
        m = cfg.metrics
        terrain = self.map.terrain_xyz()
        if len(terrain):
            true_h = np.array([cfg.world.height(x, y) for x, y, _ in terrain])
            rms = float(np.sqrt(np.mean((terrain[:, 2] - true_h) ** 2)))
        else:
            rms = math.nan
        obs = self.map.obstacle_xy()
        if len(obs) and cfg.world.walls:
            dists = [min(panel_distance(pt, w) for w in cfg.world.walls) for pt in obs]
            obs_max = float(max(dists))
        else:
            obs_max = 0.0 if not len(obs) else math.inf
        complete = nav.mode == DONE and not nav.state.aborted and crash is None
        n_events = sum(1 for e in events if e[11] in ("avoid", "recorded"))
        values = {
            "mission_complete": complete,
            "mission_time": float(done_at) if done_at is not None else math.nan,
            "mapping_rms": rms,
            "terrain_samples": int(len(terrain)),
            "collisions": n_events,
            "cycles": int(nav.state.cycles),
            "gusts": int(nav.gusts),
            "obstacle_points": int(len(obs)),
            "obstacle_distance_max": obs_max,
            "max_penetration_fraction": float(max_pen / self.params.wing_length),
            "min_clearance": float(min_clear),
            "clamp_count": int(sum(1 for r in states if r[24])),
            "dead_reckoning_periods": int(dr_periods),
            "dead_reckoning_error_max": float(pos_err_max),
            "crash": crash or "",
        }
        checks = {}
        if "mission_complete" in m:
            checks["mission_complete"] = complete == bool(m["mission_complete"])
        if "mapping_rms_max" in m:
            checks["mapping_rms"] = bool(rms <= m["mapping_rms_max"])
        if "min_terrain_samples" in m:
            checks["terrain_samples"] = len(terrain) >= m["min_terrain_samples"]
        if "min_collisions" in m:
            checks["collisions"] = n_events >= m["min_collisions"]
        if "max_cycles" in m:
            checks["cycles"] = nav.state.cycles <= m["max_cycles"]
        if "obstacle_distance_max" in m:
            checks["obstacle_distance"] = bool(obs_max <= m["obstacle_distance_max"])
        if "max_penetration_fraction" in m:
            checks["penetration"] = values["max_penetration_fraction"] <= m[
                "max_penetration_fraction"]
        if "used_dead_reckoning" in m:
            checks["dead_reckoning"] = (dr_periods > 0) == bool(m["used_dead_reckoning"])
        passed = all(checks.values()) and crash is None
        report = {
            "scenario": cfg.name, "seed": cfg.seed, "success": passed,
            "metrics": values, "checks": checks,
            "thresholds": {"slope_L": self.cal.thresholds.slope_L,
                           "intercept_L": self.cal.thresholds.intercept_L,
                           "slope_R": self.cal.thresholds.slope_R,
                           "intercept_R": self.cal.thresholds.intercept_R,
                           "contact_stiffness": self.cal.contact.stiffness},
        }
        limits = {}
        if "max_runtime" in m:
            limits["runtime"] = runtime <= m["max_runtime"]
        return RunResult(report, passed and all(limits.values()), self.map, events, runtime,
                         metrics=values)

    def _write(self, out, states, cur_rows, stat_rows, events, result: RunResult):
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "states.csv", STATE_COLS, states)
        write_array_csv(out / "currents.csv", CURRENT_COLS, np.array(cur_rows, float))
        write_csv(out / "stats.csv", STAT_COLS, stat_rows)
        write_csv(out / "events.csv", EVENT_COLS, events)
        self.map.to_csv(out / "map.csv")
        write_world(out / "world.csv", self.cfg.world)
        write_toml(out / "report.toml", result.report)
        write_toml(out / "timing.toml", {"runtime_s": result.runtime,
                                         "max_runtime_s": self.cfg.metrics.get("max_runtime",
                                                                               math.inf)})
        from .plots import regenerate
        regenerate(out)
        result.out_dir = out


def threshold_at_quiet(V, model):
    import warnings
    from ..sensing import ExtrapolationWarning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        return threshold_at(V, model)


def run_scenario(cfg: ScenarioConfig, out_dir: Path | None = None) -> RunResult:
    return Simulation(cfg).run(out_dir)
