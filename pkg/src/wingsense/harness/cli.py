"""Command line entry point.

``wingsense run <config>``                run one scenario
``wingsense calibrate <kind> <config>``   run a calibration protocol
``wingsense replay <trace-dir>``          rebuild figures from traces
``wingsense batch <glob> --seeds a..b``   run configs over a seed range

Configs may be file paths or bundled scenario names (``ramp``, ``wall``,
``corridor``, ``ground_effect``, ``collision_bound``).  Outputs go under
``$WINGSENSE_OUTPUT`` (default ``./runs``) as ``<name>/seed-<n>/``.  The
exit code is 0 only when every checked metric passes; 2 means the input
was rejected.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from fnmatch import fnmatch
from pathlib import Path

from .config import ConfigError, ScenarioConfig, bundled_scenarios, load_config, \
    resolve_config_path
from .io import output_root

log = logging.getLogger("wingsense")

KIND_ALIASES = {
    "ground_effect_sweep": "ground_effect_sweep", "ground-effect": "ground_effect_sweep",
    "ground_effect": "ground_effect_sweep",
    "collision_bound_sweep": "collision_bound_sweep", "collision-bound": "collision_bound_sweep",
    "collision_bound": "collision_bound_sweep",
}


def parse_seeds(text: str) -> list[int]:
    """``"a..b"`` (inclusive), ``"a,b,c"`` or a single integer."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; expected a..b") from None


def run_dir(cfg: ScenarioConfig, out: str | None = None) -> Path:
    return Path(out) if out else output_root() / cfg.name / f"seed-{cfg.seed}"


def execute(cfg: ScenarioConfig, out_dir: Path) -> tuple[dict, bool]:
    """Run a flight or calibration config and write its outputs."""
    if cfg.kind == "flight":
        from .sim import run_scenario
        res = run_scenario(cfg, out_dir)
        report = dict(res.report)
        if res.passed != report["success"]:
            report["checks"] = {**report["checks"], "runtime": False}
        return report, res.passed
    from .calibration import run_calibration
    out_dir.mkdir(parents=True, exist_ok=True)
    return run_calibration(cfg, out_dir)


def _load(name: str) -> ScenarioConfig:
    return load_config(resolve_config_path(name))


def _summary(report: dict, passed: bool, out_dir: Path) -> str:
    checks = report.get("checks", {})
    failed = [k for k, v in checks.items() if not v]
    state = "PASS" if passed else "FAIL"
    extra = f" failed: {', '.join(failed)}" if failed else ""
    crash = report.get("metrics", {}).get("crash")
    if crash:
        extra += f" crash: {crash}"
    return f"{state} {report['scenario']} seed={report['seed']} -> {out_dir}{extra}"


def cmd_run(args) -> int:
    cfg = _load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = run_dir(cfg, args.out)
    report, passed = execute(cfg, out)
    print(_summary(report, passed, out))
    return 0 if passed else 1


def cmd_calibrate(args) -> int:
    kind = KIND_ALIASES.get(args.kind)
    if kind is None:
        raise ConfigError([("kind", f"unknown calibration {args.kind!r}; expected one of "
                                    "ground_effect_sweep, collision_bound_sweep")])
    cfg = replace(_load(args.config), kind=kind)
    out = run_dir(cfg, args.out)
    report, passed = execute(cfg, out)
    print(_summary(report, passed, out))
    for k, v in report["metrics"].items():
        print(f"  {k} = {v}")
    return 0 if passed else 1


def cmd_replay(args) -> int:
    from .plots import regenerate
    d = Path(args.trace_dir)
    if not d.is_dir():
        print(f"error: no trace directory {d}", file=sys.stderr)
        return 2
    made = regenerate(d)
    for p in made:
        print(p)
    if not made:
        print(f"error: no traces found in {d}", file=sys.stderr)
        return 2
    return 0


def _batch_job(item):
    path, seed, out = item
    cfg = load_config(path).with_seed(seed)
    out_dir = Path(out) / cfg.name / f"seed-{seed}" if out else run_dir(cfg)
    report, passed = execute(cfg, out_dir)
    return _summary(report, passed, out_dir), passed


def cmd_batch(args) -> int:
    paths = sorted(p for p in glob.glob(args.config_glob) if Path(p).is_file())
    if not paths:
        bundled = bundled_scenarios()
        paths = [str(bundled[n]) for n in sorted(bundled) if fnmatch(
            n, args.config_glob)]
    if not paths:
        print(f"error: no configs match {args.config_glob!r}", file=sys.stderr)
        return 2
    for p in paths:  # validate everything before running anything
        load_config(p)
    items = [(p, s, args.out) for p in paths for s in args.seeds]
    # runs are timed against their runtime limit, so do not oversubscribe
    jobs = max(1, min(args.jobs, os.cpu_count() or 1))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_batch_job, items))
    else:
        results = [_batch_job(it) for it in items]
    for line, _ in results:
        print(line)
    n_ok = sum(ok for _, ok in results)
    print(f"{n_ok}/{len(results)} runs passed")
    return 0 if n_ok == len(results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wingsense", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (default: under the output root)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate", help="run a calibration protocol")
    c.add_argument("kind")
    c.add_argument("config")
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("replay", help="regenerate figures from a trace directory")
    p.add_argument("trace_dir")
    p.set_defaults(func=cmd_replay)

    b = sub.add_parser("batch", help="run configs over a seed range")
    b.add_argument("config_glob")
    b.add_argument("--seeds", type=parse_seeds, required=True, help="inclusive range a..b")
    b.add_argument("--jobs", type=int, default=1, help="parallel runs (capped at CPU count)")
    b.add_argument("--out", help="output root for this batch")
    b.set_defaults(func=cmd_batch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for path, msg in exc.errors:
            print(f"  {path}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
