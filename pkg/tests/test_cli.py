import argparse
import json
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from omnisweep.cli import build_parser, main
from omnisweep.geometry import save_rig
from omnisweep.io import read_pfm, write_image
from omnisweep.suite import bundled_rig

MINI = ["--rig", "bundled:mini"]


def subparsers(parser, prefix=()):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                yield from subparsers(sub, prefix + (name,))
            return
    yield prefix, parser


@pytest.fixture(scope="module")
def rendered(tmp_path_factory):
    out = tmp_path_factory.mktemp("render")
    assert main(["synth", "render", "--scene", "bundled:mini", *MINI, "--out", str(out)]) == 0
    return out


def test_help_documents_every_flag(capsys):
    commands = list(subparsers(build_parser()))
    assert {c for c, _ in commands} >= {("estimate",), ("sweep", "build-tables"), ("teacher", "pseudo-label"),
                                         ("synth", "render"), ("eval", "metrics"), ("bench", "sweep"),
                                         ("bench", "pipeline"), ("replay",)}
    for cmd, parser in commands:
        assert main([*cmd, "--help"]) == 0
        text = capsys.readouterr().out
        for action in parser._actions:
            if action.help == argparse.SUPPRESS:
                continue
            for opt in action.option_strings:
                assert opt in text, (cmd, opt)


def test_smoke_all_commands(tmp_path, capsys):
    t0 = time.perf_counter()
    r = tmp_path / "render"
    assert main(["synth", "render", "--scene", "bundled:mini", *MINI, "--out", str(r)]) == 0
    assert sorted(p.name for p in r.iterdir()) == sorted([f"cam{i}.png" for i in range(6)]
                                                         + ["gt.pfm", "manifest.json"])
    tables = tmp_path / "tables" / "mini.tbl"
    assert main(["sweep", "build-tables", *MINI, "--output", str(tables), "--stride", "2"]) == 0
    est = tmp_path / "est"
    assert main(["estimate", *MINI, "--in", str(r), "--out", str(est), "--tables", str(tables)]) == 0
    assert {"depth.pfm", "depth.png", "cloud.ply", "manifest.json"} <= {p.name for p in est.iterdir()}
    label = tmp_path / "label"
    assert main(["teacher", "pseudo-label", *MINI, "--in", str(r), "--out", str(label),
                 "--pinhole", "160", "--export-disparity"]) == 0
    assert (label / "disparity" / "disparity.json").exists()
    assert main(["eval", "metrics", "--pred", str(est), "--gt", str(r), "--out", str(tmp_path / "m.csv")]) == 0
    assert "absrel" in (tmp_path / "m.csv").read_text()
    assert main(["bench", "sweep", *MINI, "--grid", "120x60", "--d", "8", "--runs", "3",
                 "--out", str(tmp_path / "b.csv")]) == 0
    assert main(["bench", "pipeline", *MINI, "--scene", "bundled:mini", "--stride", "4", "--runs", "3",
                 "--out", str(tmp_path / "p.csv")]) == 0
    assert main(["replay", "--manifest", str(est), "--out", str(tmp_path / "again")]) == 0
    elapsed = time.perf_counter() - t0
    capsys.readouterr()
    assert elapsed < 60, elapsed


def test_estimate_on_sphere_and_replay(rendered, tmp_path):
    out = tmp_path / "est"
    assert main(["estimate", *MINI, "--in", str(rendered), "--out", str(out), "--stride", "4"]) == 0
    depth = read_pfm(out / "depth.pfm")
    rig = bundled_rig("mini")
    step = (1 / rig.min_depth - 1 / rig.max_depth) / (rig.num_hypotheses - 1)
    assert abs(1 / np.nanmedian(depth) - 1 / 5.0) <= step
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "estimate" and manifest["config"]["rig_hash"] == rig.fingerprint()
    assert list(out.glob("manifest*.json")) == [out / "manifest.json"]
    again = tmp_path / "again"
    assert main(["replay", "--manifest", str(out / "manifest.json"), "--out", str(again)]) == 0
    assert (again / "depth.pfm").read_bytes() == (out / "depth.pfm").read_bytes()


def test_teacher_import_round_trip(rendered, tmp_path):
    first = tmp_path / "a"
    assert main(["teacher", "pseudo-label", *MINI, "--in", str(rendered), "--out", str(first),
                 "--pinhole", "160", "--export-disparity"]) == 0
    second = tmp_path / "b"
    assert main(["teacher", "pseudo-label", *MINI, "--in", str(rendered), "--out", str(second),
                 "--pinhole", "160", "--import-disparity", str(first / "disparity")]) == 0
    a, b = read_pfm(first / "label.pfm"), read_pfm(second / "label.pfm")
    assert np.isfinite(a).all()
    assert np.nanmax(np.abs(a - b)) < 1e-3
    # disparities tied to a different calibration are refused
    assert main(["teacher", "pseudo-label", "--rig", "bundled:suite", "--in", str(rendered), "--out",
                 str(tmp_path / "c"), "--import-disparity", str(first / "disparity")]) == 2


def test_exit_codes(rendered, tmp_path, capsys):
    assert main(["frobnicate"]) == 2
    assert main(["estimate", "--rig", str(tmp_path / "none.yaml"), "--in", str(rendered),
                 "--out", str(tmp_path / "x")]) == 2
    # image size mismatch names the camera
    bad = tmp_path / "bad"
    shutil.copytree(rendered, bad)
    write_image(bad / "cam4.png", np.zeros((10, 10)))
    assert main(["estimate", *MINI, "--in", str(bad), "--out", str(tmp_path / "y")]) == 2
    assert "camera 4" in capsys.readouterr().err
    # corrupt rig: field-level message
    rig_file = tmp_path / "rig.yaml"
    save_rig(bundled_rig("mini"), rig_file)
    rig_file.write_text(rig_file.read_text().replace("min_depth: 0.5", "min_depth: fast"))
    assert main(["estimate", "--rig", str(rig_file), "--in", str(rendered), "--out", str(tmp_path / "z")]) == 2
    assert "min_depth" in capsys.readouterr().err
    # conventional tables cannot drive the estimator
    conv = tmp_path / "conv.tbl"
    assert main(["sweep", "build-tables", *MINI, "--output", str(conv), "--method", "conventional"]) == 0
    assert main(["estimate", *MINI, "--in", str(rendered), "--out", str(tmp_path / "w"),
                 "--tables", str(conv)]) == 2
    assert main(["bench", "sweep", *MINI, "--runs", "2", "--grid", "64x32", "--d", "4"]) == 1
    assert main(["estimate", *MINI, "--in", str(rendered), "--out", str(tmp_path / "v"), "--threads", "0"]) == 2


def test_empty_evaluation_is_runtime_failure(tmp_path):
    from omnisweep.io import write_pfm
    write_pfm(tmp_path / "p.pfm", np.full((2, 2), np.nan, np.float32))
    write_pfm(tmp_path / "g.pfm", np.ones((2, 2), np.float32))
    assert main(["eval", "metrics", "--pred", str(tmp_path / "p.pfm"), "--gt", str(tmp_path / "g.pfm")]) == 1


def test_console_script_help():
    exe = shutil.which("omnisweep")
    cmd = [exe] if exe else [sys.executable, "-m", "omnisweep.cli"]
    proc = subprocess.run(cmd + ["--help"], capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and "estimate" in proc.stdout
