"""Acceptance criteria, one test each.  Every test prints a single
PASS/FAIL line with the measured values, also when output is captured."""

import filecmp
import math

import numpy as np
import pytest
from scipy.signal import freqz

from wingsense.control import ControllerGains
from wingsense.dynamics import VehicleParams, VehicleState, integrate_rigid_body
from wingsense.harness.calibration import run_calibration
from wingsense.harness.checks import averaged_step_response
from wingsense.harness.config import bundled_scenarios, load_config
from wingsense.harness.sim import run_scenario
from wingsense.navigation import (DeadReckonPose, compose_steps, dead_reckon, distinct_points,
                                  merge_maps)
from wingsense.sensing import (REFERENCE_THRESHOLDS, StrokeStats, clearance_feedback,
                               lowpass_coefficient)

pytestmark = pytest.mark.acceptance


def _cfg(name, seed=None):
    cfg = load_config(bundled_scenarios()[name])
    return cfg if seed is None else cfg.with_seed(seed)


@pytest.fixture
def verdict(capsys):
    def say(n, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return say


@pytest.fixture(scope="module")
def wall_dirs(tmp_path_factory):
    base = tmp_path_factory.mktemp("wall")
    res = run_scenario(_cfg("wall"), base / "a")
    return res, base


def test_c1_ramp_terrain_following(verdict):
    res = run_scenario(_cfg("ramp"))
    rms = res.metrics["mapping_rms"]
    ok = rms <= 0.02 and res.runtime < 60.0 and res.metrics["mission_complete"]
    verdict(1, "ramp", ok, f"mapping RMS {rms:.4f} m, runtime {res.runtime:.1f} s, "
                           f"complete {res.metrics['mission_complete']}")


def test_c2_ground_effect_calibration(verdict):
    report, _ = run_calibration(_cfg("ground_effect"))
    m = report["metrics"]
    ok = (abs(m["lift_peak"] - 3.3) <= 0.05 and abs(m["drag_min"] - 2.3) <= 0.05
          and m["threshold_r2"] >= 0.99
          and abs(m["threshold_L"] / 0.242 - 1) <= 0.10
          and abs(m["threshold_R"] / 0.205 - 1) <= 0.10)
    verdict(2, "ground effect", ok,
            f"lift peak {m['lift_peak']:.3f} cbar, drag min {m['drag_min']:.3f} cbar, "
            f"R2 {m['threshold_r2']:.4f}, thresholds {m['threshold_L']:.4f}/"
            f"{m['threshold_R']:.4f} A")


def test_c3_contact_and_classifier(verdict):
    report, _ = run_calibration(_cfg("collision_bound"))
    m = report["metrics"]
    ok = (abs(m["contact_rise"] - 0.10) <= 0.01 and m["clean_correct"] == 6
          and m["noisy_rate"] >= 0.95)
    verdict(3, "contact", ok, f"rise {m['contact_rise']:.4f}, clean {m['clean_correct']}/6, "
                              f"noisy {m['noisy_rate']:.3f}")


def test_c4_wall_avoidance(verdict, wall_dirs):
    res, _ = wall_dirs
    m = res.metrics
    ok = (m["mission_complete"] and m["cycles"] <= 10 and m["obstacle_points"] > 0
          and m["obstacle_distance_max"] <= 0.085)
    verdict(4, "wall", ok, f"complete {m['mission_complete']}, cycles {m['cycles']}, "
                           f"{m['obstacle_points']} points within "
                           f"{m['obstacle_distance_max']:.4f} m")


def test_c5_corridor_success_and_union(verdict):
    results = {s: run_scenario(_cfg("corridor", s)) for s in range(1, 21)}
    ok_runs = [s for s, r in results.items() if r.passed]
    rate = len(ok_runs) / len(results)
    four = [results[s].map for s in range(1, 5)]
    single = [len(distinct_points(m.obstacle_xy())) for m in four]
    union = len(distinct_points(merge_maps(four).obstacle_xy()))
    ok = rate >= 0.95 and union > max(single)
    failed = sorted(set(results) - set(ok_runs))
    verdict(5, "corridor", ok, f"{len(ok_runs)}/20 seeds succeed (failed {failed}), "
                               f"union {union} points vs single {single}")


def test_c6_controller(verdict):
    g = ControllerGains()
    settle = {d: averaged_step_response(0.15, 0.10, d).settling_time(0.005)
              for d in (0.0, g.h_z, -g.h_z)}
    r0 = averaged_step_response(0.15, 0.10, 0.0)
    dv = float(np.diff(r0.lyapunov).max())
    s = 0.01
    audit = g.robust_z(s) - g.h_z ** 2 * s / (4 * g.eps_z)
    ok = max(settle.values()) <= 2.0 and dv <= 1e-6 and abs(audit) <= 1e-12
    verdict(6, "controller", ok,
            "settling " + ", ".join(f"{v:.3f} s @ d={d:+.3f} N" for d, v in settle.items())
            + f", max dV {dv:.2e}, audit residual {audit:.1e}")


def test_c7_numerical_hygiene(verdict, wall_dirs, tmp_path):
    p = VehicleParams()
    s = VehicleState(np.zeros(3), np.zeros(3), np.eye(3), np.array([3.0, -2.0, 5.0]))
    _, orth, det = integrate_rigid_body(s, np.array([0.0, 0.0, p.mass * p.gravity]),
                                        np.array([1e-6, -2e-6, 5e-7]), p, 1e-4, 1_000_000)
    rng = np.random.default_rng(7)
    n = 10_000
    psis = np.cumsum(rng.normal(0.0, 0.01, n))
    steps = rng.normal(0.0, 2e-4, (n, 2)) + [2e-4, 0.0]
    pose = DeadReckonPose()
    for k in range(n):
        pose = dead_reckon(pose, psis[k], steps[k])
    comp = compose_steps(DeadReckonPose(), psis, steps)
    dr = math.hypot(pose.x - comp.x, pose.y - comp.y)
    _, base = wall_dirs
    run_scenario(_cfg("wall"), base / "b")
    names = sorted(q.name for q in (base / "a").iterdir() if q.name != "timing.toml")
    _, mismatch, errors = filecmp.cmpfiles(base / "a", base / "b", names, shallow=False)
    ok = orth <= 1e-9 and det <= 1e-9 and dr <= 1e-9 and not mismatch and not errors
    verdict(7, "numerics", ok, f"orthonormality {orth:.1e}, det {det:.1e} over 1e6 steps, "
                               f"composition {dr:.1e} over 1e4, "
                               f"{len(names) - len(mismatch)}/{len(names)} files identical")


def test_c8_filter_and_deadband(verdict):
    a = lowpass_coefficient()
    _, h = freqz([a], [1.0, -(1 - a)], worN=[0.0, 34.0, 200.0], fs=2000.0)
    g0, g34, g200 = np.abs(h)
    thr = 0.242
    inside = np.linspace(0.75 * thr, thr, 101)
    ex = [clearance_feedback(StrokeStats.constant(i, 0.205), 12.0,
                             REFERENCE_THRESHOLDS).excess[0] for i in inside]
    jumps = [abs(clearance_feedback(StrokeStats.constant(e + d, 0.205), 12.0,
                                    REFERENCE_THRESHOLDS).excess[0])
             for e in (0.75 * thr, thr) for d in (-1e-9, 1e-9)]
    ok = (abs(g0 - 1) <= 1e-12 and abs(g200 * math.sqrt(2) - 1) <= 0.02 and g34 >= 0.98
          and max(np.abs(ex)) == 0.0 and max(jumps) <= 2e-9)
    verdict(8, "filter", ok, f"DC {g0:.6f}, 34 Hz {g34:.4f}, 200 Hz {g200:.4f}, "
                             f"band max {max(np.abs(ex)):.1e}, edge jump {max(jumps):.1e}")
