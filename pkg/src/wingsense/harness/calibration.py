"""Calibration protocols run on a clamped vehicle.

* ground-effect sweep: cycle-mean lift and current against clearance, and
  the threshold lines fitted at the reference clearance;
* collision-bound sweep: colliding half-stroke current against drive
  amplitude with a wall just inside the stroke;
* contact stiffness: tuned so a nominal brush raises cycle-mean current by
  the target fraction;
* direction trials: six wall placements, each producing one signature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from ..actuation import MotorParams
from ..dynamics import ControlInput, VehicleParams, VehicleState, cycle_average_wrench
from ..engine import CLAMPED, PhysicsModel, S_IL, S_IR, S_T, S_UPL, S_UPR
from ..environment import ContactParams, GroundEffectCurve, Panel, World
from ..sensing import (REFERENCE_THRESHOLDS, BeatAccumulator, CollisionDetector,
                       LowPassFilter, ThresholdModel, calibrate_thresholds, group_delay_samples,
                       lowpass, stroke_stats, threshold_at)
from .io import write_array_csv, write_csv, write_toml

PANEL_HALF = 0.3  # lateral reach of calibration panels, m


@dataclass(frozen=True)
class Bench:
    """Everything a clamped run needs."""

    params: VehicleParams = VehicleParams()
    motor: MotorParams = MotorParams()
    curve: GroundEffectCurve = GroundEffectCurve()
    contact: ContactParams = ContactParams()

    @classmethod
    def from_config(cls, cfg) -> "Bench":
        return cls(cfg.vehicle, cfg.motor, cfg.curve, cfg.contact)


@dataclass
class Trace:
    t: np.ndarray
    i: np.ndarray  # (n, 2)
    up: np.ndarray  # (n, 2) bool


def clamped_trace(bench: Bench, u: ControlInput, d_over_c: float, beats: float,
                  walls: tuple[Panel, ...] = (), settle_beats: int = 0) -> Trace:
    """Noise-free 2 kHz currents with the vehicle held at a clearance.

    ``settle_beats`` wingbeats are simulated first and dropped.
    """
    p = bench.params
    world = World((-1.0, 1.0, -1.0, 1.0), 0.0, (), tuple(walls))
    pm = PhysicsModel(p, bench.motor, world, bench.curve, bench.contact, mode=CLAMPED)
    y = VehicleState.hover((0.0, 0.0, d_over_c * p.mean_chord)).to_vector()
    pm.start(y)
    if settle_beats:
        pm.step_block(u.as_array(), int(round(settle_beats * p.period / pm.dt)))
    n = int(math.ceil(beats * p.period / pm.dt))
    # shift so the window starts exactly at a sample boundary
    s, _, _ = pm.step_block(u.as_array(), n)
    return Trace(s[:, S_T], s[:, [S_IL, S_IR]], s[:, [S_UPL, S_UPR]] > 0.5)


def hover_current(bench: Bench, d_over_c: float = 3.3) -> float:
    tr = clamped_trace(bench, ControlInput(bench.params.hover_voltage), d_over_c, 3)
    return float(tr.i.mean())


def tip_reach(params: VehicleParams, V: float) -> tuple[float, float]:
    """Body-frame (forward, lateral) tip position at the stroke extreme."""
    amp = params.amplitude_gain * V
    L = params.wing_length
    return L * math.sin(amp), L * math.cos(amp)


def direction_walls(params: VehicleParams, V: float, penetration: float) -> dict[str, tuple]:
    """Panels producing each of the six signatures on a clamped vehicle.

    Front and back panels span both wings; the one-sided panels cover only
    one wing's stroke extreme.
    """
    fx, fy = tip_reach(params, V)
    x = fx - penetration
    lo = 0.5 * fy  # keeps one-sided panels clear of the other wing
    full = (-PANEL_HALF, PANEL_HALF)
    left = (lo, PANEL_HALF)
    right = (-PANEL_HALF, -lo)

    def panel(xp, ys):
        # orientation so the panel normal faces the vehicle is irrelevant here
        return (Panel((xp, ys[0]), (xp, ys[1]), 0.0, 0.6),)

    return {
        "both-up": panel(x, full), "both-down": panel(-x, full),
        "L-up": panel(x, left), "L-down": panel(-x, left),
        "R-up": panel(x, right), "R-down": panel(-x, right),
    }


def contact_rise(bench: Bench, V: float = 12.0, penetration: float = 0.005,
                 d_over_c: float = 3.3, beats: int = 6) -> float:
    """Cycle-mean current rise (fraction) with a front panel at nominal depth."""
    u = ControlInput(V)
    free = clamped_trace(bench, u, d_over_c, beats, settle_beats=1)
    walls = direction_walls(bench.params, V, penetration)["both-up"]
    hit = clamped_trace(bench, u, d_over_c, beats, walls, settle_beats=1)
    return float(hit.i.mean() / free.i.mean() - 1.0)


def calibrate_contact_stiffness(bench: Bench, target: float = 0.10, V: float = 12.0,
                                penetration: float = 0.005, d_over_c: float = 3.3,
                                bracket: tuple[float, float] = (0.5, 2000.0)) -> ContactParams:
    """Contact stiffness giving ``target`` cycle-mean rise; damping scales with it."""
    c0 = bench.contact
    ratio = c0.damping / c0.stiffness

    def f(k):
        b = replace(bench, contact=replace(c0, stiffness=k, damping=ratio * k))
        return contact_rise(b, V, penetration, d_over_c) - target

    k = brentq(f, *bracket, xtol=1e-6, rtol=1e-10)
    return replace(c0, stiffness=k, damping=ratio * k)


# ---------------------------------------------------------------------------
# ground-effect sweep


def threshold_protocol(bench: Bench, voltages, datasets: int = 20, beats: int = 3,
                       d_over_c: float = 3.3, noise_fraction: float = 0.02,
                       seed: int = 0) -> tuple[ThresholdModel, list]:
    """Fit threshold lines from ``datasets`` noisy windows per voltage."""
    rng = np.random.default_rng(seed)
    sigma = noise_fraction * hover_current(bench, d_over_c)
    runs = []
    for V in voltages:
        tr = clamped_trace(bench, ControlInput(V), d_over_c, datasets * beats + 1,
                           settle_beats=1)
        noisy = tr.i + rng.normal(0.0, sigma, tr.i.shape)
        f = lowpass(noisy)
        for k in range(datasets):
            t_lo = tr.t[0] + k * beats * bench.params.period
            sel = (tr.t >= t_lo - 1e-12) & (tr.t < t_lo + (beats + 1) * bench.params.period)
            st = stroke_stats(tr.t[sel], f[sel], tr.up[sel], bench.params.wingbeat_hz,
                              window=beats)
            runs.append((float(V), st))
    return calibrate_thresholds(runs, (float(min(voltages)), float(max(voltages)))), runs


def ground_effect_sweep(bench: Bench, voltages=(10.0, 11.0, 12.0, 13.0, 14.0, 15.0),
                        clearances=None, datasets: int = 20, beats: int = 3,
                        reference: float = 3.3, noise_fraction: float = 0.02, seed: int = 0,
                        out_dir: Path | None = None) -> dict:
    """Lift and current against clearance, plus fitted threshold lines.

    The extremum search uses a 0.01-chord grid at hover excitation; the
    per-voltage curves use the (coarser) ``clearances`` grid.
    """
    p = bench.params
    Vh = p.hover_voltage
    fine = np.round(np.arange(1.5, 15.0 + 1e-9, 0.01), 10)
    lift_fine = np.array([
        cycle_average_wrench(ControlInput(Vh), p, (float(bench.curve.lift(x)),
                                                   float(bench.curve.drag(x))))[0][2]
        for x in fine])
    cur_fine = np.array([clamped_trace(bench, ControlInput(Vh), x, 1).i.mean() for x in fine])
    lift_peak = float(fine[np.argmax(lift_fine)])
    drag_min = float(fine[np.argmin(cur_fine)])

    grid = np.asarray(clearances if clearances else np.round(np.arange(1.5, 15.01, 0.25), 10))
    rows = []
    for V in voltages:
        for x in grid:
            GL, GD = float(bench.curve.lift(x)), float(bench.curve.drag(x))
            lift = cycle_average_wrench(ControlInput(V), p, (GL, GD))[0][2]
            tr = clamped_trace(bench, ControlInput(V), float(x), 3)
            st = stroke_stats(tr.t, tr.i, tr.up, p.wingbeat_hz)
            rows.append((V, x, GL, GD, lift, st.mean_L, st.mean_R))
    model, runs = threshold_protocol(bench, voltages, datasets, beats, reference,
                                     noise_fraction, seed)
    thr12 = threshold_at(Vh, model)
    result = {
        "lift_peak": lift_peak, "drag_min": drag_min, "model": model,
        "threshold_r2": min(model.r2), "thresholds_at_hover": thr12, "rows": rows,
        "runs": runs, "fine": (fine, lift_fine, cur_fine),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_array_csv(out_dir / "ground_effect.csv",
                        ["V_s", "d_over_c", "G_L", "G_D", "lift", "i_L", "i_R"], np.array(rows))
        write_array_csv(out_dir / "ground_effect_fine.csv", ["d_over_c", "lift", "i_mean"],
                        np.stack([fine, lift_fine, cur_fine], axis=1))
        write_csv(out_dir / "calibration_runs.csv", ["V_s", "mean_L", "mean_R"],
                  [(V, s.mean_L, s.mean_R) for V, s in runs])
        write_toml(out_dir / "thresholds.toml", {
            "slope_L": model.slope_L, "intercept_L": model.intercept_L,
            "slope_R": model.slope_R, "intercept_R": model.intercept_R,
            "r2_L": model.r2[0], "r2_R": model.r2[1],
            "lift_peak": lift_peak, "drag_min": drag_min,
            "threshold_L_at_hover": thr12[0], "threshold_R_at_hover": thr12[1]})
    return result


# ---------------------------------------------------------------------------
# collision bounds


def collision_bound_sweep(bench: Bench, voltages=(10.0, 11.0, 12.0, 13.0, 14.0, 15.0),
                          penetration: float = 0.005, d_over_c: float = 3.3, beats: int = 6,
                          out_dir: Path | None = None) -> dict:
    """Upstroke-mean current with and without a front panel at each voltage."""
    rows = []
    for V in voltages:
        u = ControlInput(V)
        free = clamped_trace(bench, u, d_over_c, beats, settle_beats=1)
        walls = direction_walls(bench.params, V, penetration)["both-up"]
        hit = clamped_trace(bench, u, d_over_c, beats, walls, settle_beats=1)
        sf = stroke_stats(free.t, free.i, free.up, bench.params.wingbeat_hz)
        sh = stroke_stats(hit.t, hit.i, hit.up, bench.params.wingbeat_hz)
        bound = 0.5 * (sh.up_L + sh.up_R)
        rows.append((V, bound, 0.5 * (sf.up_L + sf.up_R),
                     float(sh.means().mean() / sf.means().mean() - 1.0)))
    arr = np.array(rows)
    A = np.stack([arr[:, 0], np.ones(len(arr))], axis=1)
    coef, *_ = np.linalg.lstsq(A, arr[:, 1], rcond=None)
    res = arr[:, 1] - A @ coef
    r2 = 1.0 - float(res @ res) / float(((arr[:, 1] - arr[:, 1].mean()) ** 2).sum())
    out = {"rows": rows, "slope": float(coef[0]), "intercept": float(coef[1]), "r2": r2}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_array_csv(out_dir / "collision_bounds.csv", ["V_s", "bound", "free", "rise"], arr)
        write_toml(out_dir / "collision_bounds.toml",
                   {"slope": out["slope"], "intercept": out["intercept"], "r2": r2})
    return out


# ---------------------------------------------------------------------------
# direction classification trials


def direction_traces(bench: Bench, V: float = 12.0, penetration: float = 0.005,
                     d_over_c: float = 3.3, free_beats: int = 12,
                     hit_beats: int = 4) -> tuple[Trace, dict[str, Trace]]:
    """Collision-free trace and one contact trace per signature."""
    u = ControlInput(V)
    free = clamped_trace(bench, u, d_over_c, free_beats, settle_beats=1)
    hits = {sig: clamped_trace(bench, u, d_over_c, hit_beats, walls, settle_beats=1)
            for sig, walls in direction_walls(bench.params, V, penetration).items()}
    return free, hits


def _beat_channels(tr: Trace, currents: np.ndarray, f: float, delay: int):
    acc = BeatAccumulator(f, flag_delay=delay)
    return [s for _, s in acc.push(tr.t, currents, tr.up, (0.5, 0.5))]


def classify_trial(free: Trace, hit: Trace, f: float, sigma: float = 0.0,
                   rng: np.random.Generator | None = None, detector_kw=None) -> str | None:
    """First signature the streaming detector reports for free-then-hit data.

    A report during the collision-free part counts as a false alarm and is
    returned as ``"false-alarm"``.
    """
    det = CollisionDetector(**(detector_kw or {}))
    lp = LowPassFilter()
    out = None
    for k, tr in enumerate((free, hit)):
        cur = tr.i
        if sigma > 0:
            cur = cur + rng.normal(0.0, sigma, cur.shape)
        beats = _beat_channels(tr, lp.process(cur), f, group_delay_samples())
        for st in beats:
            ev = det.update(st, 0.0, (0.0, 0.0, 0.0), 0.0)
            if ev is not None:
                return ev.signature if k == 1 else "false-alarm"
    return out


def classifier_trials(bench: Bench, n_trials: int = 1000, noise_fraction: float = 0.02,
                      seed: int = 0, V: float = 12.0, penetration: float = 0.005) -> dict:
    """Noise-free recovery of all six signatures and noisy recovery rate."""
    f = bench.params.wingbeat_hz
    free, hits = direction_traces(bench, V, penetration)
    clean = {sig: classify_trial(free, tr, f) for sig, tr in hits.items()}
    sigma = noise_fraction * float(free.i.mean())
    rng = np.random.default_rng(seed)
    sigs = list(hits)
    correct = 0
    confusion: dict[tuple[str, str | None], int] = {}
    for n in range(n_trials):
        sig = sigs[n % len(sigs)]
        got = classify_trial(free, hits[sig], f, sigma, rng)
        correct += got == sig
        confusion[(sig, got)] = confusion.get((sig, got), 0) + 1
    return {"clean": clean, "clean_correct": sum(v == k for k, v in clean.items()),
            "noisy_rate": correct / n_trials, "confusion": confusion, "sigma": sigma}


# ---------------------------------------------------------------------------
# scenario entry point


def run_calibration(cfg, out_dir: Path | None = None) -> tuple[dict, bool]:
    """Run the protocol named by ``cfg.kind``; returns (report, passed)."""
    bench = Bench.from_config(cfg)
    cc = cfg.calibration
    m = cfg.metrics
    metrics: dict = {}
    checks: dict = {}
    if cfg.kind == "ground_effect_sweep":
        res = ground_effect_sweep(bench, cc.voltages, cc.clearances or None, cc.datasets,
                                  cc.beats, cc.reference_clearance,
                                  cfg.sensing.noise_fraction, cfg.seed, out_dir)
        ref = threshold_at(bench.params.hover_voltage, REFERENCE_THRESHOLDS)
        thr = res["thresholds_at_hover"]
        rel = [abs(a / b - 1.0) for a, b in zip(thr, ref)]
        metrics = {"lift_peak": res["lift_peak"], "drag_min": res["drag_min"],
                   "threshold_r2": res["threshold_r2"], "threshold_L": thr[0],
                   "threshold_R": thr[1], "threshold_rel_error": max(rel)}
        tol = m.get("peak_tolerance", 0.05)
        if "lift_peak" in m:
            checks["lift_peak"] = abs(res["lift_peak"] - m["lift_peak"]) <= tol + 1e-9
        if "drag_min" in m:
            checks["drag_min"] = abs(res["drag_min"] - m["drag_min"]) <= tol + 1e-9
        if "threshold_r2_min" in m:
            checks["threshold_r2"] = res["threshold_r2"] >= m["threshold_r2_min"]
        if "threshold_rel_error" in m:
            checks["thresholds"] = max(rel) <= m["threshold_rel_error"]
    else:
        if cfg.calibrate_contact:
            contact = calibrate_contact_stiffness(bench, cc.contact_rise,
                                                  bench.params.hover_voltage,
                                                  cc.contact_penetration, cc.reference_clearance)
            bench = replace(bench, contact=contact)
        rise = contact_rise(bench, bench.params.hover_voltage, cc.contact_penetration,
                            cc.reference_clearance)
        res = collision_bound_sweep(bench, cc.voltages, cc.contact_penetration,
                                    cc.reference_clearance, out_dir=out_dir)
        trials = classifier_trials(bench, cc.trials, cfg.sensing.noise_fraction, cfg.seed,
                                   bench.params.hover_voltage, cc.contact_penetration)
        metrics = {"contact_stiffness": bench.contact.stiffness, "contact_rise": rise,
                   "bound_slope": res["slope"], "bound_intercept": res["intercept"],
                   "bound_r2": res["r2"], "clean_correct": trials["clean_correct"],
                   "noisy_rate": trials["noisy_rate"]}
        if "rise_target" in m:
            checks["contact_rise"] = abs(rise - m["rise_target"]) <= m.get("rise_tolerance",
                                                                           0.01)
        checks["bound_slope"] = res["slope"] > 0
        if "clean_directions_min" in m:
            checks["clean_directions"] = trials["clean_correct"] >= m["clean_directions_min"]
        if "classifier_rate_min" in m:
            checks["classifier_rate"] = trials["noisy_rate"] >= m["classifier_rate_min"]
    passed = all(checks.values())
    report = {"scenario": cfg.name, "kind": cfg.kind, "seed": cfg.seed, "success": passed,
              "metrics": metrics, "checks": checks}
    if out_dir is not None:
        write_toml(Path(out_dir) / "report.toml", report)
        from .plots import regenerate
        regenerate(out_dir)
    return report, passed
