import filecmp
import os

import numpy as np
import pytest

from wingsense.environment import Panel, TerrainPatch, World
from wingsense.harness.cli import main, parse_seeds
from wingsense.harness.config import (ConfigError, bundled_scenarios, load_config, parse_config,
                                      parse_quantity)
from wingsense.harness.io import dumps_toml, read_csv, read_world, write_world

SHORT = """
[scenario]
name = "short"
seed = 4
duration = "1.5 s"

[world]
bounds = ["-1 m", "1 m", "-1 m", "1 m"]

[start]
position = ["-0.3 m", "0 m", "7 cm"]

[navigation]
route = [["-0.3 m", "0 m"], ["0.3 m", "0 m"]]

[sensing]
thresholds = [0.015, 0.062, 0.014, 0.037]

[metrics]
mission_complete = true
max_runtime = "60 s"
"""


@pytest.fixture
def short_cfg(tmp_path, monkeypatch):
    monkeypatch.setenv("WINGSENSE_OUTPUT", str(tmp_path / "out"))
    p = tmp_path / "short.toml"
    p.write_text(SHORT)
    return p


def test_quantities_with_units():
    assert parse_quantity("1 ft") == pytest.approx(0.3048)
    assert parse_quantity("20 deg") == pytest.approx(0.349065850398866)
    assert parse_quantity("3.3 cbar") == pytest.approx(0.06996)
    assert parse_quantity("500 ms") == 0.5
    assert parse_quantity(2) == 2.0
    with pytest.raises(ConfigError):
        parse_quantity("3 parsec")
    with pytest.raises(ConfigError):
        parse_quantity(True)


def test_config_errors_carry_field_paths():
    with pytest.raises(ConfigError) as exc:
        parse_config({"scenario": {"name": "x", "duration": "3 parsec"},
                      "start": {"position": ["1 m", "2 m"]}, "bogus": {}})
    errs = dict(exc.value.errors)
    assert errs["scenario.duration"] == "unknown unit 'parsec'"
    assert "start.position" in errs and errs["bogus"] == "unknown field"
    assert len(exc.value.errors) == 3


def test_bundled_scenarios_parse():
    names = set(bundled_scenarios())
    assert {"ramp", "wall", "corridor", "ground_effect", "collision_bound"} <= names
    for name, path in bundled_scenarios().items():
        cfg = load_config(path)
        assert cfg.name == name


def test_seed_ranges():
    assert parse_seeds("1..3") == [1, 2, 3]
    assert parse_seeds("4,7") == [4, 7]
    assert parse_seeds("5") == [5]
    with pytest.raises(Exception):
        parse_seeds("5..2")


def test_world_csv_round_trip(tmp_path):
    w = World((-1.0, 2.0, -0.5, 0.5), 0.01,
              (TerrainPatch(0.0, 1.0, -0.5, 0.5, 0.02, 0.1, 0.0),),
              (Panel((0.5, -0.2), (0.5, 0.2), 0.0, 0.6),))
    write_world(tmp_path / "w.csv", w)
    assert read_world(tmp_path / "w.csv") == w


def test_toml_writer_is_stable():
    text = dumps_toml({"a": 1, "b": 0.1, "t": {"ok": True, "s": "x"}})
    assert "b = 0.10000000000000001" in text
    assert text == dumps_toml({"a": 1, "b": 0.1, "t": {"ok": True, "s": "x"}})


def test_run_writes_outputs_and_exit_code(short_cfg, tmp_path, capsys):
    rc = main(["run", str(short_cfg)])
    out_dir = tmp_path / "out" / "short" / "seed-4"
    # the mission cannot finish in 1.5 s, so the run fails its metrics
    assert rc == 1
    assert "FAIL short seed=4" in capsys.readouterr().out
    for name in ("states.csv", "currents.csv", "stats.csv", "events.csv", "map.csv",
                 "world.csv", "report.toml", "timing.toml"):
        assert (out_dir / name).is_file()
    cols = read_csv(out_dir / "states.csv")
    assert {"t", "x", "y", "z", "V_s", "mode"} <= set(cols)
    assert np.all(np.diff(cols["t"]) > 0)


def test_rerun_is_byte_identical(short_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", str(short_cfg), "--out", str(a)])
    main(["run", str(short_cfg), "--out", str(b)])
    names = sorted(p.name for p in a.iterdir() if p.name != "timing.toml")
    assert names
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors


def test_replay_regenerates_figures(short_cfg, tmp_path, capsys):
    main(["run", str(short_cfg), "--out", str(tmp_path / "r")])
    for svg in (tmp_path / "r").glob("*.svg"):
        svg.unlink()
    assert main(["replay", str(tmp_path / "r")]) == 0
    assert len(list((tmp_path / "r").glob("*.svg"))) == 3
    assert main(["replay", str(tmp_path / "missing")]) == 2
    (tmp_path / "empty").mkdir()
    assert main(["replay", str(tmp_path / "empty")]) == 2


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[scenario]\nname = "b"\nduration = "2 parsec"\n')
    assert main(["run", str(bad)]) == 2
    assert "scenario.duration" in capsys.readouterr().err
    assert main(["calibrate", "nonsense", "ground_effect"]) == 2


def test_batch_over_seeds(short_cfg, tmp_path, capsys):
    rc = main(["batch", str(short_cfg), "--seeds", "1..2", "--out", str(tmp_path / "b")])
    out = capsys.readouterr().out
    assert "0/2 runs passed" in out and rc == 1
    assert (tmp_path / "b" / "short" / "seed-2" / "report.toml").is_file()
    with pytest.raises(SystemExit):
        main(["batch", str(short_cfg), "--seeds", "5..2"])


def test_output_root_from_environment(short_cfg, tmp_path):
    assert os.environ["WINGSENSE_OUTPUT"] == str(tmp_path / "out")
    from wingsense.harness.io import output_root
    assert output_root() == tmp_path / "out"
