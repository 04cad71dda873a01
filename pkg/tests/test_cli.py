import json
import subprocess
import sys

import numpy as np
import pytest

from coarsefine.cli import main
from coarsefine.fine_match import PointCorrespondences
from coarsefine.io import read_pose


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "2500", "--overlap", "0.7", "--count", "2", "--out", str(out)]) == 0
    return out


def test_synth_writes_manifest(scenes, capsys):
    lines = (scenes / "manifest.txt").read_text().splitlines()
    assert lines == [
        "scene_0000_src.ply scene_0000_tgt.ply scene_0000_gt.txt",
        "scene_0001_src.ply scene_0001_tgt.ply scene_0001_gt.txt",
    ]


def test_register_with_gt(scenes, tmp_path, capsys):
    code = main(["register", str(scenes / "scene_0000_src.ply"), str(scenes / "scene_0000_tgt.ply"),
                 "--gt", str(scenes / "scene_0000_gt.txt"), "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 5  # 4 pose rows + evaluation line
    ev = json.loads(out[4])
    assert ev["registered"] and ev["rte"] < 0.075
    pose = read_pose(tmp_path / "pose.txt")
    np.testing.assert_allclose(pose.as_matrix(), np.array([r.split() for r in out[:4]], dtype=float))
    c = PointCorrespondences.from_jsonl((tmp_path / "correspondences.jsonl").read_text())
    assert len(c) > 0
    first = json.loads((tmp_path / "correspondences.jsonl").read_text().splitlines()[0])
    assert set(first) == {"src", "tgt", "c_fine", "c_coarse", "c_global"}
    assert json.loads((tmp_path / "evaluation.json").read_text()) == ev


def test_evaluate_is_byte_identical(scenes, tmp_path, capsys):
    for run in ("a", "b"):
        assert main(["evaluate", str(scenes / "manifest.txt"), "--out", str(tmp_path / run)]) == 0
    for name in ("report.jsonl", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert set(summary) >= {"fmr", "rr", "mean_rte", "mean_rre", "median_ir"}


def test_evaluate_coarse_only_and_jobs(scenes, tmp_path, capsys):
    assert main(["evaluate", str(scenes / "manifest.txt"), "--coarse-only", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "coarse_summary.json").exists()
    assert main(["evaluate", str(scenes / "manifest.txt"), "--jobs", "2", "--out", str(tmp_path / "j")]) == 0
    assert main(["evaluate", str(scenes / "manifest.txt"), "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "j" / "report.jsonl").read_bytes() == (tmp_path / "s" / "report.jsonl").read_bytes()


def test_losscheck_output(capsys):
    assert main(["losscheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [line.split(" = ")[0] for line in out] == ["Lc", "Lf", "L", "grad_check_max_abs_err"]
    assert float(out[3].split(" = ")[1]) < 1e-4


@pytest.mark.parametrize("argv, stage", [
    (["register", "missing_src.ply", "missing_tgt.ply"], "load"),
    (["evaluate", "missing_manifest.txt"], "manifest"),
    (["register", "a.ply", "b.ply", "--features", "weird"], "features"),
    (["register", "a.ply", "b.ply", "--tau-c", "2"], "config"),
    (["synth", "--count", "0", "--out", "x"], "synth"),
])
def test_errors_are_stage_tagged(argv, stage, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith(f"error: {stage}: ")


def test_feature_file_row_mismatch(scenes, tmp_path, capsys):
    (tmp_path / "f.csv").write_text("1,0\n")
    code = main(["register", str(scenes / "scene_0000_src.ply"), str(scenes / "scene_0000_tgt.ply"),
                 "--features", f"file:{tmp_path / 'f.csv'},{tmp_path / 'f.csv'}"])
    assert code == 1
    assert "error: features: " in capsys.readouterr().err


def test_empty_cloud_reports_downsample_stage(tmp_path, capsys):
    (tmp_path / "e.csv").write_text("")
    (tmp_path / "f.csv").write_text("0,0,0\n")
    assert main(["register", str(tmp_path / "e.csv"), str(tmp_path / "f.csv")]) == 1
    assert capsys.readouterr().err.strip() == "error: downsample: empty input"


def test_module_entry_point_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "coarsefine.cli", "evaluate", str(tmp_path / "none.txt")],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert proc.stderr.startswith("error: manifest: ")
