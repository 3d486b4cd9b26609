"""Scenario configuration: TOML tables whose quantities carry unit suffixes.

Quantities are written either as bare numbers (SI) or as strings such as
``"1 ft"``, ``"20 deg"`` or ``"3.3 cbar"``.  Validation collects every
problem with its dotted field path before raising :class:`ConfigError`.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..actuation import MotorParams
from ..control import ControllerGains
from ..dynamics import VehicleParams
from ..environment import (ContactParams, GroundEffectCurve, Gust, Panel, TerrainPatch, World,
                           corridor_walls)
from ..navigation import NavConfig

FOOT = 0.3048
MEAN_CHORD = 0.0212

UNITS = {
    "m": 1.0, "cm": 0.01, "mm": 0.001, "ft": FOOT, "in": 0.0254, "cbar": MEAN_CHORD,
    "deg": math.pi / 180.0, "rad": 1.0,
    "s": 1.0, "ms": 1e-3,
    "V": 1.0, "A": 1.0, "mA": 1e-3, "Hz": 1.0,
    "m/s": 1.0, "cm/s": 0.01, "mm/s": 0.001, "N": 1.0, "N/m": 1.0, "kg": 1.0, "g": 1e-3,
    "m/A": 1.0, "rad/s": 1.0,
}
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z/]+)?\s*$")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(field_path, message)``."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


class _Reader:
    """Typed access to a nested table that records errors by path."""

    def __init__(self, data: dict, errors: list, path: str = ""):
        self.data = data if isinstance(data, dict) else {}
        self.errors = errors
        self.path = path
        self.used: set[str] = set()
        if not isinstance(data, dict):
            errors.append((path or "<root>", "expected a table"))

    def _p(self, key) -> str:
        return f"{self.path}.{key}" if self.path else str(key)

    def has(self, key) -> bool:
        return key in self.data

    def sub(self, key) -> "_Reader":
        self.used.add(key)
        return _Reader(self.data.get(key, {}), self.errors, self._p(key))

    def subs(self, key) -> list["_Reader"]:
        self.used.add(key)
        items = self.data.get(key, [])
        if not isinstance(items, list):
            self.errors.append((self._p(key), "expected an array of tables"))
            return []
        return [_Reader(it, self.errors, f"{self._p(key)}[{i}]") for i, it in enumerate(items)]

    def qty(self, key, default=None, positive=False, nonneg=False, path=None, value=None):
        p = path or self._p(key)
        if value is None:
            self.used.add(key)
            if key not in self.data:
                if default is None:
                    self.errors.append((p, "missing required value"))
                    return math.nan
                return default
            value = self.data[key]
        x = parse_quantity(value, p, self.errors)
        if math.isnan(x):
            return x
        if positive and not x > 0:
            self.errors.append((p, "must be positive"))
        if nonneg and not x >= 0:
            self.errors.append((p, "must be non-negative"))
        return x

    def vec(self, key, n=None, default=None):
        p = self._p(key)
        self.used.add(key)
        if key not in self.data:
            if default is None:
                self.errors.append((p, "missing required value"))
                return [math.nan] * (n or 1)
            return list(default)
        raw = self.data[key]
        if not isinstance(raw, list):
            self.errors.append((p, "expected an array"))
            return [math.nan] * (n or 1)
        if n is not None and len(raw) != n:
            self.errors.append((p, f"expected {n} values, got {len(raw)}"))
        return [parse_quantity(v, f"{p}[{i}]", self.errors) for i, v in enumerate(raw)]

    def get(self, key, default=None, types=None):
        self.used.add(key)
        v = self.data.get(key, default)
        if types is not None and v is not None and not isinstance(v, types):
            self.errors.append((self._p(key), f"expected {types}"))
        return v

    def check_unknown(self, allowed: set[str]):
        for k in self.data:
            if k not in allowed:
                self.errors.append((self._p(k), "unknown field"))


def parse_quantity(value: Any, path: str = "value", errors: list | None = None) -> float:
    """Number in SI units from a bare number or a ``"<number> <unit>"`` string."""
    def fail(msg):
        if errors is None:
            raise ConfigError([(path, msg)])
        errors.append((path, msg))
        return math.nan

    if isinstance(value, bool):
        return fail("expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        return fail("expected a number or quantity string")
    m = _QTY.match(value)
    if not m:
        return fail(f"cannot parse quantity {value!r}")
    unit = m.group(2)
    if unit is None:
        return float(m.group(1))
    if unit not in UNITS:
        return fail(f"unknown unit {unit!r}")
    return float(m.group(1)) * UNITS[unit]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensingConfig:
    noise_fraction: float = 0.02
    cutoff: float = 200.0
    deadband: tuple[float, float] = (0.75, 1.0)
    thresholds: tuple[float, float, float, float] | None = None  # None → calibrate
    rel_threshold: float = 0.10
    baseline_beats: int = 10
    debounce: int = 2


@dataclass(frozen=True)
class CalibrationConfig:
    voltages: tuple[float, ...] = (10.0, 11.0, 12.0, 13.0, 14.0, 15.0)
    datasets: int = 20
    beats: int = 3
    clearances: tuple[float, ...] = ()  # in mean chords
    reference_clearance: float = 3.3
    contact_rise: float = 0.10
    contact_penetration: float = 0.005
    trials: int = 1000  # noisy direction-classification trials


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    kind: str = "flight"
    seed: int = 0
    duration: float = 30.0
    world: World = World()
    start: tuple[float, float, float] = (0.0, 0.0, 0.1)
    start_yaw: float = 0.0
    start_jitter: float = 0.0  # half-width of the seeded start offset, m
    vehicle: VehicleParams = VehicleParams()
    motor: MotorParams = MotorParams()
    contact: ContactParams = ContactParams()
    calibrate_contact: bool = False
    curve: GroundEffectCurve = GroundEffectCurve()
    sensing: SensingConfig = SensingConfig()
    control: ControllerGains = ControllerGains()
    nav: NavConfig = NavConfig()
    denied_zones: tuple[tuple[float, float, float, float], ...] = ()
    velocity_noise: float = 0.01
    velocity_bias: float = 0.0  # spread of the per-run body-velocity bias, m/s
    calibration: CalibrationConfig = CalibrationConfig()
    metrics: dict = field(default_factory=dict)
    log_every: int = 5
    source: str = ""

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


METRIC_KEYS = {
    "mission_complete", "mapping_rms_max", "min_collisions", "max_cycles",
    "obstacle_distance_max", "max_penetration_fraction", "min_terrain_samples",
    "max_runtime", "threshold_r2_min", "lift_peak", "drag_min", "peak_tolerance",
    "threshold_rel_error", "rise_target", "rise_tolerance", "used_dead_reckoning",
    "clean_directions_min", "classifier_rate_min",
}


def _world(r: _Reader) -> World:
    bounds = tuple(r.vec("bounds", 4, default=(-2.0, 2.0, -2.0, 2.0)))
    base = r.qty("base_height", 0.0)
    patches: list[TerrainPatch] = []
    walls: list[Panel] = []
    gusts: list[Gust] = []
    for t in r.subs("terrain"):
        x0, x1 = t.vec("x", 2)
        y0, y1 = t.vec("y", 2, default=(bounds[2], bounds[3]))
        patches.append(TerrainPatch(x0, x1, y0, y1, t.qty("height", 0.0),
                                    t.get("slope_x", 0.0), t.get("slope_y", 0.0)))
        t.check_unknown({"x", "y", "height", "slope_x", "slope_y"})
    for rp in r.subs("ramp"):
        # ramp rising along +x from `start`, `length` measured along the slope
        x_s = rp.qty("start")
        L = rp.qty("length", positive=True)
        ang = rp.qty("slope")
        y0, y1 = rp.vec("y", 2, default=(bounds[2], bounds[3]))
        h0 = rp.qty("base", base)
        run, rise = L * math.cos(ang), L * math.sin(ang)
        b = math.tan(ang)
        patches.append(TerrainPatch(x_s, x_s + run, y0, y1, h0 - b * x_s, b, 0.0))
        if rp.get("plateau", True):
            patches.append(TerrainPatch(x_s + run, bounds[1], y0, y1, h0 + rise))
        rp.check_unknown({"start", "length", "slope", "y", "base", "plateau"})
    for w in r.subs("wall"):
        s = w.vec("start", 2)
        e = w.vec("end", 2)
        walls.append(Panel(tuple(s), tuple(e), w.qty("base", 0.0), w.qty("height", 2 * FOOT)))
        w.check_unknown({"start", "end", "base", "height"})
    for c in r.subs("corridor"):
        pts = c.get("centerline", [])
        cl = [tuple(parse_quantity(v, f"{c.path}.centerline", c.errors) for v in p) for p in pts]
        if len(cl) < 2:
            c.errors.append((f"{c.path}.centerline", "needs at least two points"))
        else:
            walls.extend(corridor_walls(cl, c.qty("width", FOOT, positive=True),
                                        c.qty("height", 2 * FOOT),
                                        c.get("cap_start", True), c.get("cap_end", True)))
        c.check_unknown({"centerline", "width", "height", "cap_start", "cap_end"})
    for g in r.subs("gust"):
        t0, t1 = g.vec("window", 2)
        if not t1 > t0:
            g.errors.append((f"{g.path}.window", "end must follow start"))
        gusts.append(Gust(t0, t1, tuple(g.vec("wind", 3))))
        g.check_unknown({"window", "wind"})
    r.check_unknown({"bounds", "base_height", "terrain", "ramp", "wall", "corridor", "gust"})
    if not (bounds[0] < bounds[1] and bounds[2] < bounds[3]):
        r.errors.append((f"{r.path}.bounds", "expected xmin < xmax and ymin < ymax"))
    return World(bounds, base, tuple(patches), tuple(walls), tuple(gusts))


def _dataclass_overrides(r: _Reader, cls, base, units: dict[str, str] | None = None,
                         skip: set[str] = frozenset()):
    """Apply scalar or vector overrides from a table onto dataclass ``base``."""
    names = {f.name for f in fields(cls)} - set(skip)
    changes = {}
    for k, v in r.data.items():
        if k in skip:
            continue
        if k not in names:
            r.errors.append((r._p(k), "unknown field"))
            continue
        r.used.add(k)
        if isinstance(v, list):
            if v and isinstance(v[0], list):
                changes[k] = tuple(tuple(parse_quantity(x, f"{r._p(k)}", r.errors) for x in row)
                                   for row in v)
            else:
                changes[k] = tuple(parse_quantity(x, f"{r._p(k)}[{i}]", r.errors)
                                   for i, x in enumerate(v))
        elif isinstance(v, bool):
            changes[k] = v
        elif isinstance(v, int) and isinstance(getattr(base, k), int) and not isinstance(
                getattr(base, k), bool):
            changes[k] = v
        else:
            changes[k] = parse_quantity(v, r._p(k), r.errors)
    return changes


def parse_config(data: dict, source: str = "") -> ScenarioConfig:
    errors: list[tuple[str, str]] = []
    root = _Reader(data, errors)
    sc = root.sub("scenario")
    name = sc.get("name", Path(source).stem if source else "scenario", str)
    kind = sc.get("kind", "flight", str)
    if kind not in ("flight", "ground_effect_sweep", "collision_bound_sweep"):
        errors.append(("scenario.kind", f"unknown kind {kind!r}"))
    seed = sc.get("seed", 0, int)
    duration = sc.qty("duration", 30.0, positive=True)
    log_every = sc.get("log_every", 5, int)
    sc.check_unknown({"name", "kind", "seed", "duration", "log_every"})

    world = _world(root.sub("world"))

    st = root.sub("start")
    start = tuple(st.vec("position", 3, default=(0.0, 0.0, 0.1)))
    yaw = st.qty("yaw", 0.0)
    jitter = st.qty("jitter", 0.0, nonneg=True)
    st.check_unknown({"position", "yaw", "jitter"})

    vr = root.sub("vehicle")
    vch = _dataclass_overrides(vr, VehicleParams, VehicleParams())
    if "inertia" in vch:
        import numpy as np
        vch["inertia"] = np.diag(vch["inertia"]) if np.ndim(vch["inertia"]) == 1 else np.array(
            vch["inertia"])
    mr = root.sub("motor")
    mch = _dataclass_overrides(mr, MotorParams, MotorParams())
    cr = root.sub("contact")
    calibrate_contact = cr.data.get("stiffness") == "calibrate"
    cch = _dataclass_overrides(cr, ContactParams, ContactParams(),
                               skip={"stiffness"} if calibrate_contact else set())
    if calibrate_contact:
        cr.used.add("stiffness")

    gr = root.sub("ground_effect")
    gch = _dataclass_overrides(gr, GroundEffectCurve, GroundEffectCurve())

    sr = root.sub("sensing")
    thr_raw = sr.data.get("thresholds", "calibrate")
    sch = _dataclass_overrides(sr, SensingConfig, SensingConfig(), skip={"thresholds"})
    sr.used.add("thresholds")
    if thr_raw == "calibrate":
        sch["thresholds"] = None
    elif isinstance(thr_raw, list) and len(thr_raw) == 4:
        sch["thresholds"] = tuple(parse_quantity(v, f"sensing.thresholds[{i}]", errors)
                                  for i, v in enumerate(thr_raw))
    else:
        errors.append(("sensing.thresholds", 'expected "calibrate" or four numbers'))

    ctr = root.sub("control")
    cgch = _dataclass_overrides(ctr, ControllerGains, ControllerGains())

    nr = root.sub("navigation")
    skip = {"denied_zones", "velocity_noise", "velocity_bias"}
    nch = _dataclass_overrides(nr, NavConfig, NavConfig(), skip=skip)
    zones = []
    for i, z in enumerate(nr.data.get("denied_zones", [])):
        if not isinstance(z, list) or len(z) != 4:
            errors.append((f"navigation.denied_zones[{i}]", "expected [x0, x1, y0, y1]"))
            continue
        zones.append(tuple(parse_quantity(v, f"navigation.denied_zones[{i}]", errors) for v in z))
    vel_noise = nr.qty("velocity_noise", 0.01, nonneg=True)
    vel_bias = nr.qty("velocity_bias", 0.0, nonneg=True)

    car = root.sub("calibration")
    cach = _dataclass_overrides(car, CalibrationConfig, CalibrationConfig())

    mt = root.sub("metrics")
    metrics = {}
    for k, v in mt.data.items():
        if k not in METRIC_KEYS:
            errors.append((f"metrics.{k}", "unknown metric"))
        elif isinstance(v, bool):
            metrics[k] = v
        else:
            metrics[k] = parse_quantity(v, f"metrics.{k}", errors)

    root.check_unknown({"scenario", "world", "start", "vehicle", "motor", "contact",
                        "ground_effect", "sensing", "control", "navigation", "calibration",
                        "metrics"})

    def build(cls, base_kwargs, path):
        try:
            return cls(**base_kwargs)
        except (TypeError, ValueError) as exc:
            errors.append((path, str(exc)))
            return cls()

    vehicle = build(VehicleParams, vch, "vehicle")
    if "mean_chord" not in nch:
        nch["mean_chord"] = vehicle.mean_chord
    if "wing_length" not in nch:
        nch["wing_length"] = vehicle.wing_length
    cfg = None
    if not errors:
        cfg = ScenarioConfig(
            name=name, kind=kind, seed=seed, duration=duration, world=world, start=start,
            start_yaw=yaw, start_jitter=jitter, vehicle=vehicle, motor=build(MotorParams, mch, "motor"),
            contact=build(ContactParams, cch, "contact"), calibrate_contact=calibrate_contact,
            curve=build(GroundEffectCurve, gch, "ground_effect"),
            sensing=build(SensingConfig, sch, "sensing"),
            control=build(ControllerGains, cgch, "control"),
            nav=build(NavConfig, nch, "navigation"), denied_zones=tuple(zones),
            velocity_noise=vel_noise, velocity_bias=vel_bias, calibration=build(CalibrationConfig, cach, "calibration"),
            metrics=metrics, log_every=log_every, source=source)
        if kind == "flight" and not world.inside(start[0], start[1]):
            errors.append(("start.position", "outside the arena bounds"))
        if kind == "flight":
            for i, (x, y) in enumerate(cfg.nav.route):
                if not world.inside(x, y):
                    errors.append((f"navigation.route[{i}]", "outside the arena bounds"))
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([("<file>", f"no such file: {path}")]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("<file>", f"TOML syntax error: {exc}")]) from None
    return parse_config(data, str(path))


def bundled_scenarios() -> dict[str, Path]:
    here = Path(__file__).with_name("scenarios")
    return {p.stem: p for p in sorted(here.glob("*.toml"))}


def resolve_config_path(name_or_path: str) -> Path:
    """Path of a config file, falling back to a bundled scenario name."""
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if name_or_path in bundled:
        return bundled[name_or_path]
    return p
