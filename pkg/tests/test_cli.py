from __future__ import annotations

import json

import pytest

from silpose.cli import main
from silpose.pose import read_poses

FAST = ["--resolution-schedule", "48:4"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, out = root / "data", root / "run"
    tpl = str(data / "templates" / "template0.obj")
    assert main(["synth", "--shape", "creature", "--n", "4", "--seed", "3", "--out", str(data)]) == 0
    common = ["--dataset", str(data), "--templates", tpl, "--out", str(out), *FAST]
    assert main(["estimate", *common]) == 0
    assert main(["infer-template", *common]) == 0
    assert main(["resolve", *common]) == 0
    for name in ("silhouette", "final"):
        assert main(["eval", "--dataset", str(data), "--poses", str(out / f"poses_{name}.jsonl"),
                     "--out", str(out / f"eval_{name}")]) == 0
    assert main(["report", "--reports", str(out / "eval_silhouette"), str(out / "eval_final"),
                 "--out", str(out / "report")]) == 0
    return root


def test_pipeline_outputs(run_dir):
    out = run_dir / "run"
    for name in ("poses_silhouette.jsonl", "hypotheses.jsonl", "filter_report.json",
                 "semantic_template0.txt", "semantic_template0.obj", "poses_final.jsonl",
                 "eval_final/report.json", "report/summary.csv", "report/gd_histogram_eval_final.png",
                 "run_config.estimate.json"):
        assert (out / name).exists(), name
    final = read_poses(out / "poses_final.jsonl")
    assert len(final) == 4 and {e.phase for e in final} == {"semantics"}
    assert json.loads((out / "eval_final" / "report.json").read_text())["n_images"] == 4


def test_stages_rerun_from_files(run_dir):
    out = run_dir / "run"
    before = (out / "poses_final.jsonl").read_bytes()
    tpl = str(run_dir / "data" / "templates" / "template0.obj")
    assert main(["resolve", "--dataset", str(run_dir / "data"), "--templates", tpl, "--out", str(out), *FAST]) == 0
    assert (out / "poses_final.jsonl").read_bytes() == before


def test_config_file_and_flag_precedence(run_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 2, "seed": 9, "resolution": 200}))
    assert main(["synth", "--shape", "box", "--config", str(cfg), "--n", "1", "--out", str(tmp_path / "d")]) == 0
    doc = json.loads((tmp_path / "d" / "run_config.synth.json").read_text())
    assert doc["n"] == 1 and doc["seed"] == 9 and doc["resolution"] == 200
    assert len(json.loads((tmp_path / "d" / "manifest.json").read_text())["records"]) == 1


def test_missing_templates_exit_2(run_dir, tmp_path, capsys):
    assert main(["estimate", "--dataset", str(run_dir / "data"), "--out", str(tmp_path)]) == 2
    assert "--templates" in capsys.readouterr().err


def test_missing_dataset_exit_2(run_dir, tmp_path):
    tpl = str(run_dir / "data" / "templates" / "template0.obj")
    assert main(["estimate", "--dataset", str(tmp_path / "nope"), "--templates", tpl, "--out", str(tmp_path)]) == 2


def test_bad_schedule_exit_2(run_dir, tmp_path):
    tpl = str(run_dir / "data" / "templates" / "template0.obj")
    assert main(["estimate", "--dataset", str(run_dir / "data"), "--templates", tpl, "--out", str(tmp_path),
                 "--resolution-schedule", "64"]) == 2


def test_several_templates_need_flag(run_dir, tmp_path):
    tpl = str(run_dir / "data" / "templates" / "template0.obj")
    assert main(["estimate", "--dataset", str(run_dir / "data"), "--templates", tpl, tpl,
                 "--out", str(tmp_path)]) == 2


def test_unknown_command_exit_2():
    assert main(["frobnicate"]) == 2


def test_eval_missing_reference_exit_2(run_dir, tmp_path):
    ref = tmp_path / "ref.jsonl"
    ref.write_text("")
    poses = str(run_dir / "run" / "poses_final.jsonl")
    assert main(["eval", "--poses", poses, "--reference", str(ref), "--out", str(tmp_path)]) == 2


def test_remesh_command(tmp_path):
    assert main(["synth", "--shape", "box", "--n", "1", "--out", str(tmp_path / "d")]) == 0
    tpl = str(tmp_path / "d" / "templates" / "template0.obj")
    assert main(["remesh", "--templates", tpl, "--max-steps", "5", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "template0.grid.json").exists()
    assert "heldout_iou" in (tmp_path / "r" / "remesh_report.txt").read_text()
