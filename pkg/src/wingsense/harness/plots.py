"""SVG figures built from trace files only, so they can be regenerated
without re-running a simulation."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..environment import World  # noqa: E402
from .io import read_csv, read_world  # noqa: E402

plt.rcParams["svg.hashsalt"] = "wingsense"
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _draw_world(ax, world: World):
    for p in world.walls:
        ax.plot([p.start[0], p.end[0]], [p.start[1], p.end[1]], color="0.3", lw=2)


def current_plot(out_dir: Path) -> Path:
    cur = read_csv(out_dir / "currents.csv")
    stats = read_csv(out_dir / "stats.csv")
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for ax, w in zip(axes, ("L", "R")):
        ax.plot(cur["t"], cur[f"f_{w}"], lw=0.5, color="tab:blue", label="filtered")
        if len(stats.get("t", [])):
            ax.step(stats["t"], stats[f"mean_{w}"], where="post", color="k", lw=1,
                    label="beat mean")
            ax.step(stats["t"], stats[f"thr_{w}"], where="post", color="tab:red", lw=1,
                    label="threshold")
            ax.step(stats["t"], 0.75 * stats[f"thr_{w}"], where="post", color="tab:red",
                    lw=0.8, ls="--", label="75% of threshold")
        ax.set_ylabel(f"i_{w} (A)")
    axes[0].legend(loc="upper right", fontsize=7)
    axes[1].set_xlabel("t (s)")
    path = out_dir / "currents.svg"
    _save(fig, path)
    return path


def trajectory_plot(out_dir: Path) -> Path:
    st = read_csv(out_dir / "states.csv")
    world = read_world(out_dir / "world.csv")
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 7))
    _draw_world(a1, world)
    a1.plot(st["x"], st["y"], color="tab:blue", lw=1, label="true")
    a1.plot(st["x_est"], st["y_est"], color="tab:orange", lw=0.8, ls="--", label="estimate")
    a1.set_aspect("equal")
    a1.set_xlabel("x (m)")
    a1.set_ylabel("y (m)")
    a1.legend(fontsize=7)
    ground = np.array([world.height(x, y) for x, y in zip(st["x"], st["y"])])
    a2.plot(st["t"], st["z"], label="z")
    a2.plot(st["t"], st["z_r"], ls="--", label="z_r")
    a2.plot(st["t"], ground, color="0.4", label="terrain below")
    a2.set_xlabel("t (s)")
    a2.set_ylabel("height (m)")
    a2.legend(fontsize=7)
    path = out_dir / "trajectory.svg"
    _save(fig, path)
    return path


def map_plot(out_dir: Path) -> Path:
    mp = read_csv(out_dir / "map.csv")
    world = read_world(out_dir / "world.csv")
    kinds = np.array(mp.get("kind", []))
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 7))
    _draw_world(a1, world)
    obs = kinds == "obstacle"
    if obs.any():
        a1.scatter(mp["x"][obs], mp["y"][obs], s=12, color="tab:red", label="bump points")
    a1.set_aspect("equal")
    a1.set_xlabel("x (m)")
    a1.set_ylabel("y (m)")
    if obs.any():
        a1.legend(fontsize=7)
    ter = kinds == "terrain"
    if ter.any():
        x = mp["x"][ter]
        y = mp["y"][ter]
        order = np.argsort(x)
        true_h = np.array([world.height(a, b) for a, b in zip(x, y)])
        a2.plot(x[order], true_h[order], color="0.3", label="true terrain")
        a2.scatter(x, mp["value"][ter], s=3, color="tab:green", label="estimated")
        a2.legend(fontsize=7)
    a2.set_xlabel("x (m)")
    a2.set_ylabel("terrain height (m)")
    path = out_dir / "map.svg"
    _save(fig, path)
    return path


def regenerate(out_dir) -> list[Path]:
    """Rebuild every figure available for the traces in ``out_dir``."""
    out_dir = Path(out_dir)
    made = []
    if (out_dir / "currents.csv").exists() and (out_dir / "stats.csv").exists():
        made.append(current_plot(out_dir))
    if (out_dir / "states.csv").exists() and (out_dir / "world.csv").exists():
        made.append(trajectory_plot(out_dir))
    if (out_dir / "map.csv").exists() and (out_dir / "world.csv").exists():
        made.append(map_plot(out_dir))
    if (out_dir / "ground_effect.csv").exists():
        made.append(ground_effect_plot(out_dir))
    if (out_dir / "collision_bounds.csv").exists():
        made.append(collision_bound_plot(out_dir))
    return made


def ground_effect_plot(out_dir: Path) -> Path:
    ge = read_csv(out_dir / "ground_effect.csv")
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for V in np.unique(ge["V_s"]):
        m = ge["V_s"] == V
        a1.plot(ge["d_over_c"][m], ge["lift"][m] / ge["lift"][m][-1], lw=1, label=f"{V:g} V")
        a2.plot(ge["d_over_c"][m], ge["i_L"][m], lw=1, label=f"{V:g} V")
    a1.set_xlabel("D / mean chord")
    a1.set_ylabel("lift / far-field lift")
    a2.set_xlabel("D / mean chord")
    a2.set_ylabel("left cycle-mean current (A)")
    a2.legend(fontsize=6)
    path = out_dir / "ground_effect.svg"
    _save(fig, path)
    return path


def collision_bound_plot(out_dir: Path) -> Path:
    cb = read_csv(out_dir / "collision_bounds.csv")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(cb["V_s"], cb["bound"], "o-", label="collision bound")
    ax.plot(cb["V_s"], cb["free"], "s--", label="collision-free")
    ax.set_xlabel("V_s (V)")
    ax.set_ylabel("half-stroke mean current (A)")
    ax.legend(fontsize=7)
    path = out_dir / "collision_bounds.svg"
    _save(fig, path)
    return path
