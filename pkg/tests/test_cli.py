"""Command-line surface: exit codes, JSON/stdout agreement, reproducibility."""

import json
import os

import numpy as np
import pytest

from fairgraph.cli import main


@pytest.fixture()
def toy_dir(tmp_path):
    out = tmp_path / "data" / "toy"
    code = main(["synth", "--out", str(out), "--n", "150", "--hr-c", "0.55",
                 "--hr-s", "0.85", "--seed", "4"])
    assert code == 0
    return str(out)


def run_cli(args):
    return main(args)


def test_version_and_usage_exit_codes(capsys):
    assert main(["--version"]) == 0
    assert main(["no-such-command"]) == 2
    assert main(["analyze"]) == 2  # missing required --dataset
    capsys.readouterr()


def test_analyze_stdout_matches_json(toy_dir, tmp_path, capsys):
    out_json = tmp_path / "analyze.json"
    assert main(["analyze", "--dataset", toy_dir, "--json", str(out_json)]) == 0
    stdout = capsys.readouterr().out
    doc = json.loads(out_json.read_text())
    assert f"hr_c {doc['hr_c']:.4f}" in stdout
    assert f"hr_s {doc['hr_s']:.4f}" in stdout
    assert f"edges {doc['census']['m']}" in stdout
    census = doc["census"]
    assert census["type_i"] + census["type_ii"] + census["type_iii"] \
        + census["type_iv"] == census["m"]


def test_analyze_pseudo_without_checkpoint_is_usage_error(toy_dir, capsys):
    assert main(["analyze", "--dataset", toy_dir, "--labels", "pseudo"]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_missing_dataset_exit_2(capsys):
    assert main(["analyze", "--dataset", "nowhere"]) == 2
    capsys.readouterr()


def test_verify_ok_and_report_fields(tmp_path, capsys):
    out_json = tmp_path / "verify.json"
    assert main(["verify", "--graphs", "40", "--seed", "2",
                 "--json", str(out_json)]) == 0
    doc = json.loads(out_json.read_text())
    assert doc["passed"] is True
    assert doc["max_identity_residual"] < 1e-12
    assert {s["name"] for s in doc["suites"]} == {"identity", "signs", "budget"}
    capsys.readouterr()


def test_verify_fault_injection_exits_1(capsys):
    assert main(["verify", "--graphs", "40", "--seed", "2",
                 "--inject-fault"]) == 1
    err = capsys.readouterr().err
    assert "counterexample" in err


def test_pretrain_edit_analyze_flow(toy_dir, tmp_path, capsys):
    pre_dir = tmp_path / "pre"
    assert main(["pretrain", "--dataset", toy_dir, "--seed", "3",
                 "--out", str(pre_dir)]) == 0
    ckpt = pre_dir / "pretrained.json"
    assert ckpt.exists()
    edit_dir = tmp_path / "edit"
    assert main(["edit", "--dataset", toy_dir, "--checkpoint", str(ckpt),
                 "--out", str(edit_dir)]) == 0
    report = json.loads((edit_dir / "edit_report.json").read_text())
    assert report["census_after"]["type_iii"] == 0
    assert report["hr_c_after"] >= report["hr_c_before"]
    assert report["hr_s_after"] <= report["hr_s_before"]
    edges = (edit_dir / "edited_edges.txt").read_text().strip().splitlines()
    assert len(edges) == report["census_after"]["m"]
    assert main(["analyze", "--dataset", toy_dir, "--labels", "pseudo",
                 "--checkpoint", str(ckpt)]) == 0
    capsys.readouterr()


def test_train_evaluate_export_flow(toy_dir, tmp_path, capsys):
    run_dir = tmp_path / "runs"
    assert main(["train", "--dataset", toy_dir, "--mode", "HSCCAF",
                 "--seed", "0", "--splits", "2", "--lr", "0.05",
                 "--alpha", "1", "--omega", "0.3", "--eta", "0.09",
                 "--out", str(run_dir)]) == 0
    agg = json.loads((run_dir / "aggregate.json").read_text())
    assert agg["aggregate"]["n_runs"] == 2
    assert "config_hash" in agg and "library_version" in agg
    stdout = capsys.readouterr().out
    assert "mean(std)" in stdout

    reports = sorted(run_dir.glob("run_*_split0.json"))
    assert len(reports) == 1
    report_path = reports[0]
    ckpt_path = str(report_path).replace(".json", ".ckpt.json")
    assert main(["evaluate", "--dataset", toy_dir,
                 "--checkpoint", ckpt_path,
                 "--report", str(report_path)]) == 0
    assert "matches stored report" in capsys.readouterr().out

    emb = tmp_path / "emb.csv"
    assert main(["export", "--dataset", toy_dir, "--checkpoint", ckpt_path,
                 "--report", str(report_path), "--out", str(emb)]) == 0
    header = emb.read_text().splitlines()[0].split(",")
    assert header[:4] == ["node_id", "split", "y", "s"]
    assert len(header) == 4 + 16 + 16  # d_c = d_e = 16 defaults
    capsys.readouterr()


def test_train_caf_mode_reduction(toy_dir, tmp_path, capsys):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    common = ["--dataset", toy_dir, "--seed", "5", "--lr", "0.05",
              "--omega", "0", "--eta", "0"]
    assert main(["train", *common, "--mode", "HSCCAF-GE", "--out", str(a_dir)]) == 0
    assert main(["train", *common, "--mode", "CAF", "--out", str(b_dir)]) == 0
    a = json.loads(next(a_dir.glob("run_*_split0.json")).read_text())
    b = json.loads(next(b_dir.glob("run_*_split0.json")).read_text())
    assert [e["loss"] for e in a["epochs"]] == [e["loss"] for e in b["epochs"]]
    capsys.readouterr()


def test_grid_command(toy_dir, tmp_path, capsys):
    grid_file = tmp_path / "grid.json"
    grid_file.write_text(json.dumps({"alpha": [0.2, 0.9]}))
    out_dir = tmp_path / "grid_out"
    assert main(["grid", "--dataset", toy_dir, "--seed", "1",
                 "--grid-json", str(grid_file), "--out", str(out_dir)]) == 0
    doc = json.loads((out_dir / "grid.json").read_text())
    assert len(doc["cells"]) == 2
    scores = [c["mean_val_score"] for c in doc["cells"]]
    assert scores == sorted(scores, reverse=True)
    capsys.readouterr()


def test_bad_config_file_exit_2(toy_dir, tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"mode": "NOPE"}))
    assert main(["train", "--dataset", toy_dir, "--config", str(cfg),
                 "--out", str(tmp_path / "x")]) == 2
    cfg.write_text("{not json")
    assert main(["train", "--dataset", toy_dir, "--config", str(cfg),
                 "--out", str(tmp_path / "y")]) == 2
    capsys.readouterr()


def test_config_file_roundtrip_drives_training(toy_dir, tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "weights": {"alpha": 0.5, "beta": 1.0, "gamma": 0.5, "omega": 0.3,
                    "eta": 0.09, "K": 3, "K_prime": 3, "kappa": 1.0},
        "lr": 0.05, "T_pre": 20, "T_train": 10, "refresh_period": 5,
        "seeds": [0], "splits": [0.5, 0.25, 0.25], "mode": "HSCCAF"}))
    out_dir = tmp_path / "cfg_run"
    assert main(["train", "--dataset", toy_dir, "--config", str(cfg_path),
                 "--out", str(out_dir)]) == 0
    agg = json.loads((out_dir / "aggregate.json").read_text())
    assert agg["config"]["T_train"] == 10
    assert agg["config"]["weights"]["K"] == 3
    capsys.readouterr()
