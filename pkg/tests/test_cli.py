import json
import os

import numpy as np
import pytest
import yaml

from fluidopt.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from fluidopt.export import read_rows
from fluidopt.scenes import TOYS


def _files(d):
    out = {}
    for root, _, names in os.walk(d):
        for n in names:
            p = os.path.join(root, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, d)] = fh.read()
    return out


def test_simulate_empty_scene_writes_one_frame_per_step(tmp_path):
    scene = tmp_path / "empty.yaml"
    scene.write_text("config:\n  dim: 2\n  grid_resolution: 8\n")
    out = tmp_path / "out"
    assert main(["simulate", "--scene", str(scene), "--steps", "10", "--out", str(out)]) == EXIT_OK
    frames = sorted(os.listdir(out / "frames"))
    assert len(frames) == 10
    assert json.loads((out / "manifest.json").read_text())["command"] == "simulate"
    with open(out / "frames" / frames[-1]) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# manifest") and lines[1].startswith("particle_id") and len(lines) == 2


def test_simulate_is_byte_reproducible(tmp_path):
    args = ["simulate", "--scene", "toy_gathering", "--steps", "3", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    a.pop("manifest.json")
    b.pop("manifest.json")
    assert a == b


def test_gradcheck_free_particle(tmp_path, capsys):
    assert main(["gradcheck", "--scene", "free_particle", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "gradreport.json").read_text())
    assert rep["max_rel_error"] <= 1e-3
    assert len(read_rows(tmp_path / "gradcheck.csv")) == 2
    assert "max_rel_error" in capsys.readouterr().out


def test_optimize_and_replay(tmp_path):
    out = tmp_path / "opt"
    assert main(["optimize", "--scene", "free_particle", "--method", "dp", "--budget", "5", "--out", str(out)]) == EXIT_OK
    res = json.loads((out / "result.json").read_text())
    assert res["final_loss"] <= res["initial_loss"]
    rows = read_rows(out / "history.csv")
    assert len(rows) == 5 and "wall_time" in rows[0]
    rep = tmp_path / "replay"
    assert main(["simulate", "--scene", "free_particle", "--steps", "4", "--actions", str(out / "trajectory.json"),
                 "--out", str(rep)]) == EXIT_OK


def test_yaml_scene_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(TOYS["free_particle"]()))
    assert main(["simulate", "--scene", str(p), "--steps", "1", "--out", str(tmp_path / "o")]) == EXIT_OK


@pytest.mark.parametrize("argv", [
    ["simulate", "--scene", "no_such_scene"],
    ["optimize", "--scene", "free_particle", "--method", "newton"],
    ["validate", "nonsense"],
    ["simulate"],
])
def test_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_bad_yaml_is_usage_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("config: [1, 2\n")
    assert main(["simulate", "--scene", str(p), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_validate_single_suite(tmp_path, capsys):
    assert main(["validate", "dam_break", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "dam_break.json").read_text())
    assert rep["passed"] and "wall_time" not in rep
    assert "dam_break" in json.loads((tmp_path / "timing.json").read_text())
    assert "PASS" in capsys.readouterr().out
