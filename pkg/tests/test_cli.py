import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from taylorskel import evaluation
from taylorskel.cli import SNAPSHOT, dispatch
from taylorskel.skeleton_data import load_manifest, read_sequence
from taylorskel.taylor import TaylorConfig, taylor_transform


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert dispatch(["synth", "--classes", "8", "--per-class", "16", "--seed", "7", "--out", str(d)]) == 0
    return d


def test_synth_example(synth_dir):
    data = load_manifest(synth_dir / "manifest.json")
    assert data.num_classes == 8 and len(data.sequences) == 128
    assert json.loads((synth_dir / SNAPSHOT).read_text())["seed"] == 7


def test_transform_example(synth_dir, tmp_path, capsys):
    src = sorted((synth_dir / "sequences").iterdir())[0]
    assert dispatch(["transform", "--in", str(src), "--block", "4", "--step", "1", "--order", "1",
                     "--motion", "--out", str(tmp_path)]) == 0
    out = read_sequence(tmp_path / f"{src.stem}.taylor.json")
    expected = taylor_transform(read_sequence(src), TaylorConfig(4, 1, 1))
    np.testing.assert_array_equal(out.frames, expected.frames)
    assert (tmp_path / f"{src.stem}.motion.json").exists() and (tmp_path / SNAPSHOT).exists()


def test_compare_matches_library(tmp_path, capsys):
    a = evaluation.EvalReport.from_per_class([50.0, 60.0, 70.0], "a", ["x", "y", "z"])
    b = evaluation.EvalReport.from_per_class([55.0, 50.0, 70.0], "b", ["x", "y", "z"])
    a.save(tmp_path / "a.report.json")
    b.save(tmp_path / "b.report.json")
    capsys.readouterr()
    assert dispatch(["compare", str(tmp_path / "a.report.json"), str(tmp_path / "b.report.json"), "--top", "10"]) == 0
    assert capsys.readouterr().out == evaluation.delta_table(a, b, k=10).format()


def test_usage_errors_exit_1(capsys):
    assert dispatch([]) == 1
    assert dispatch(["frobnicate"]) == 1
    assert dispatch(["compare", "a", "b", "--top", "0"]) == 1
    assert dispatch(["render", "skeleton", "--out", "x"]) == 1
    assert dispatch(["--help"]) == 0


def test_data_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    capsys.readouterr()
    assert dispatch(["transform", "--in", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["command"] == "transform" and err["error"]
    assert dispatch(["eval", "--checkpoint", str(tmp_path / "missing.json"), "--manifest", str(bad),
                     "--out", str(tmp_path / "o")]) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TAYLORSKEL_OUT", str(tmp_path / "env"))
    assert dispatch(["synth", "--classes", "2", "--per-class", "2"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_missing_output_dir_is_usage_error(monkeypatch):
    monkeypatch.delenv("TAYLORSKEL_OUT", raising=False)
    assert dispatch(["synth"]) == 1


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "taylorskel.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout


@pytest.mark.parametrize("model", ["stgcn", "hyperformer"])
def test_end_to_end_smoke(tmp_path, model, capsys):
    start = time.perf_counter()
    d = tmp_path
    assert dispatch(["synth", "--classes", "4", "--per-class", "6", "--frames", "20", "--seed", "1",
                     "--out", str(d / "data")]) == 0
    seq = sorted((d / "data" / "sequences").iterdir())[0]
    assert dispatch(["transform", "--in", str(seq), "--motion", "--out", str(d / "tf")]) == 0
    for kind in ("original", "taylor"):
        assert dispatch(["train", "--model", model, "--input", kind, "--micro", "--epochs", "2",
                         "--batch-size", "8", "--manifest", str(d / "data" / "manifest.json"),
                         "--out", str(d / f"run_{kind}")]) == 0
        assert dispatch(["eval", "--checkpoint", str(d / f"run_{kind}" / "checkpoint.json"),
                         "--manifest", str(d / "data" / "manifest.json"), "--out", str(d / f"ev_{kind}")]) == 0
    assert dispatch(["compare", str(d / "ev_original" / "report.json"), str(d / "ev_taylor" / "report.json"),
                     "--out", str(d / "cmp")]) == 0
    assert dispatch(["render", "skeleton", "--sequence", str(seq), "--taylor", "--frame", "3",
                     "--out", str(d / "fig")]) == 0
    assert dispatch(["render", "confusion", "--report", str(d / "ev_taylor" / "report.json"), "--labels",
                     "--out", str(d / "fig2")]) == 0
    expected = [
        "data/manifest.json", "tf/" + seq.stem + ".taylor.json", "tf/" + seq.stem + ".motion.json",
        "run_original/checkpoint.json", "run_original/history.csv", "run_taylor/checkpoint.json",
        "ev_original/report.json", "ev_original/confusion.csv", "ev_taylor/report.json",
        "cmp/delta.txt", "cmp/delta.csv", "fig/skeleton.svg", "fig2/confusion.svg",
    ]
    missing = [p for p in expected if not (d / p).exists()]
    assert missing == []
    for sub in ("data", "tf", "run_original", "ev_taylor", "cmp", "fig", "fig2"):
        assert (d / sub / SNAPSHOT).exists()
    assert len(open(d / "run_taylor" / "history.csv").read().strip().splitlines()) == 3
    assert time.perf_counter() - start < 300
    assert os.path.getsize(d / "fig" / "skeleton.svg") > 0
