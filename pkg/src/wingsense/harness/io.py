"""Trace and report files.

Floats are written with 17 significant digits so reruns are byte-identical
and round-trip exactly.  Column contracts:

``states.csv``
    t, x, y, z, vx, vy, vz, roll, pitch, yaw, wx, wy, wz, x_est, y_est,
    z_r, x_r, y_r, psi_r, V_s, dV, V_b, sigma, s_z, clamped, clearance,
    dead_reckoning, mode
``currents.csv``
    t, i_L, i_R (noisy samples), f_L, f_R (filtered), up_L, up_R
``stats.csv``
    beat, t, mean_L, up_L, down_L, mean_R, up_R, down_R, thr_L, thr_R,
    ratio_L, ratio_R, band, excess_L, excess_R, V_s
``events.csv``
    t, signature, direction, gust_possible, x, y, heading,
    r_L_up, r_L_down, r_R_up, r_R_down, action
``map.csv``
    kind, x, y, value, heading, signature, run_id
``world.csv``
    kind, x0, y0, x1, y1, a, b, c (panels and terrain patches)
"""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..environment import Panel, TerrainPatch, World

OUTPUT_ENV = "WINGSENSE_OUTPUT"


def output_root(default: str = "runs") -> Path:
    """Root directory for run outputs, overridable with ``WINGSENSE_OUTPUT``."""
    return Path(os.environ.get(OUTPUT_ENV, default))


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_array_csv(path, header: Sequence[str], data: np.ndarray) -> None:
    data = np.asarray(data, float).reshape(-1, len(header))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path) -> dict[str, np.ndarray | list]:
    """Columns by name; numeric columns become float arrays (blank cells as NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return {}
    header, body = rows[0], rows[1:]
    out: dict = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        try:
            if not any(col):
                raise ValueError
            out[name] = np.array([float(x) if x else np.nan for x in col], float)
        except ValueError:
            out[name] = col
    return out


def write_world(path, world: World) -> None:
    bx0, bx1, by0, by1 = world.bounds
    rows = [("bounds", bx0, by0, bx1, by1, world.base_height, 0.0, 0.0)]
    for p in world.walls:
        rows.append(("panel", p.start[0], p.start[1], p.end[0], p.end[1], p.z0,
                     p.z0 + p.height, 0.0))
    for t in world.terrain:
        rows.append(("terrain", t.x0, t.y0, t.x1, t.y1, t.a, t.b, t.c))
    write_csv(path, ["kind", "x0", "y0", "x1", "y1", "a", "b", "c"], rows)


def read_world(path) -> World:
    cols = read_csv(path)
    walls, patches = [], []
    bounds, base = (-2.0, 2.0, -2.0, 2.0), 0.0
    for k, kind in enumerate(cols["kind"]):
        v = [cols[c][k] for c in ("x0", "y0", "x1", "y1", "a", "b", "c")]
        if kind == "bounds":
            bounds, base = (v[0], v[2], v[1], v[3]), v[4]
        elif kind == "panel":
            walls.append(Panel((v[0], v[1]), (v[2], v[3]), v[4], v[5] - v[4]))
        else:
            patches.append(TerrainPatch(v[0], v[2], v[1], v[3], v[4], v[5], v[6]))
    return World(bounds, base, tuple(patches), tuple(walls))


def _toml_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}" if ("e" in f"{x:.17g}" or "." in f"{x:.17g}") else f"{x:.1f}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    s = str(v).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{s}"'


def dumps_toml(data: dict) -> str:
    """Minimal TOML writer for flat tables of scalars and arrays."""
    lines = []
    scalars = {k: v for k, v in data.items() if not isinstance(v, dict)}
    for k, v in scalars.items():
        lines.append(f"{k} = {_toml_value(v)}")
    for k, v in data.items():
        if isinstance(v, dict):
            lines.append("")
            lines.append(f"[{k}]")
            for kk, vv in v.items():
                if isinstance(vv, dict):
                    continue
                lines.append(f"{kk} = {_toml_value(vv)}")
            for kk, vv in v.items():
                if isinstance(vv, dict):
                    lines.append("")
                    lines.append(f"[{k}.{kk}]")
                    for k3, v3 in vv.items():
                        lines.append(f"{k3} = {_toml_value(v3)}")
    return "\n".join(lines) + "\n"


def write_toml(path, data: dict) -> None:
    Path(path).write_text(dumps_toml(data))
