import json
from pathlib import Path

import numpy as np
import pytest

from protoclass import binio
from protoclass.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def dir_snapshot(path):
    return {
        p.relative_to(path).as_posix(): p.read_bytes()
        for p in sorted(Path(path).rglob("*"))
        if p.is_file()
    }


@pytest.fixture()
def synth_dir(tmp_path, capsys):
    out = tmp_path / "data"
    code, _, err = run_cli(
        capsys,
        "synth", "--m", "6", "--modes", "2", "--d", "16", "--n", "30",
        "--sigma", "0.1", "--seed", "5", "--out", str(out),
    )
    assert code == 0, err
    return out


def test_synth_build_eval_smoke(tmp_path, capsys, synth_dir):
    code, _, _ = run_cli(capsys, "split", "--data", str(synth_dir), "--seed", "5")
    assert code == 0
    bank_dir = tmp_path / "bank"
    code, out, err = run_cli(
        capsys,
        "build", "--data", str(synth_dir), "--prompts", str(synth_dir / "prompts"),
        "--k", "2", "--seed", "5", "--out", str(bank_dir),
    )
    assert code == 0, err
    code, out, _ = run_cli(
        capsys,
        "eval", "--data", str(synth_dir), "--bank", str(bank_dir),
        "--mode", "training_free_visual", "--out", str(tmp_path / "report.json"),
    )
    assert code == 0
    payload = json.loads(out)
    assert 0.0 <= payload["result"]["accuracy"] <= 1.0
    assert 0.0 <= payload["result"]["macro_f1"] <= 1.0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["mode"]["kind"] == "training_free_visual"


def test_full_pipeline_with_train_and_knn(tmp_path, capsys, synth_dir):
    run_cli(capsys, "split", "--data", str(synth_dir), "--seed", "5")
    bank_dir = tmp_path / "bank"
    run_cli(
        capsys,
        "build", "--data", str(synth_dir), "--prompts", str(synth_dir / "prompts"),
        "--k", "2", "--seed", "5", "--out", str(bank_dir),
    )
    trained_dir = tmp_path / "trained"
    code, out, err = run_cli(
        capsys,
        "train", "--data", str(synth_dir), "--bank", str(bank_dir),
        "--out", str(trained_dir), "--epochs", "5", "--seed", "5",
    )
    assert code == 0, err
    payload = json.loads(out)
    assert payload["result"]["epochs"] == 5
    assert (trained_dir / "train_report.jsonl").is_file()

    code, out, _ = run_cli(
        capsys,
        "eval", "--data", str(synth_dir), "--bank", str(trained_dir),
        "--mode", "fully_supervised",
    )
    assert code == 0
    assert json.loads(out)["result"]["accuracy"] >= 0.5

    code, out, _ = run_cli(
        capsys,
        "eval", "--data", str(synth_dir), "--mode", "knn", "--knn-n", "3",
    )
    assert code == 0
    assert 0.0 <= json.loads(out)["result"]["accuracy"] <= 1.0


def test_zero_shot_without_train_rows(tmp_path, capsys, synth_dir):
    # tag every row as test: no train features exist, zero-shot still works
    ds_manifest = json.loads((synth_dir / "manifest.json").read_text())
    binio.write_splits(synth_dir / "splits.bin", np.full(ds_manifest["n"], 2, np.uint8))
    bank_dir = tmp_path / "bank"
    # bank built earlier from train rows would fail now; build from a copy
    # with all-train tags instead
    data2 = tmp_path / "data2"
    run_cli(
        capsys,
        "synth", "--m", "6", "--modes", "2", "--d", "16", "--n", "30",
        "--sigma", "0.1", "--seed", "5", "--out", str(data2),
    )
    run_cli(
        capsys,
        "build", "--data", str(data2), "--prompts", str(data2 / "prompts"),
        "--k", "2", "--seed", "5", "--out", str(bank_dir),
    )
    code, out, err = run_cli(
        capsys,
        "eval", "--data", str(synth_dir), "--bank", str(bank_dir),
        "--mode", "zero_shot_text",
    )
    assert code == 0, err
    assert json.loads(out)["result"]["accuracy"] >= 0.0


def test_invalid_ratio_string_names_flag(capsys, synth_dir):
    code, out, err = run_cli(
        capsys, "split", "--data", str(synth_dir), "--ratios", "0.7,0.5"
    )
    assert code == 2
    error = json.loads(err)["error"]
    assert error["type"] == "ValidationError"
    assert "--ratios" in error["message"] or "ratio" in error["message"]


def test_unknown_config_key_rejected(tmp_path, capsys, synth_dir):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"train": {"epochz": 3}}))
    code, _, err = run_cli(
        capsys,
        "train", "--data", str(synth_dir), "--bank", "x", "--out", "y",
        "--config", str(config),
    )
    assert code == 2
    assert "epochz" in json.loads(err)["error"]["message"]


def test_flags_override_config(tmp_path, capsys, synth_dir):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"split": {"ratios": [0.5, 0.25, 0.25]}, "seed": 3}))
    code, out, _ = run_cli(
        capsys,
        "split", "--data", str(synth_dir), "--config", str(config),
        "--ratios", "0.7,0.1,0.2",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["effective_config"]["split"]["ratios"] == [0.7, 0.1, 0.2]
    assert payload["effective_config"]["seed"] == 3  # from config file
    counts = payload["result"]["counts"]
    assert counts["train"] == 126  # 0.7 * 180


def test_seed_env_fallback(tmp_path, capsys, monkeypatch, synth_dir):
    monkeypatch.setenv("PROTOCLASS_SEED", "77")
    code, out, _ = run_cli(capsys, "split", "--data", str(synth_dir))
    assert code == 0
    assert json.loads(out)["effective_config"]["seed"] == 77


def test_missing_data_dir_is_data_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "split", "--data", str(tmp_path / "nope"))
    assert code == 3
    assert json.loads(err)["error"]["type"] == "DataError"


def test_divergence_exits_4(tmp_path, capsys, synth_dir):
    bank_dir = tmp_path / "bank"
    run_cli(
        capsys,
        "build", "--data", str(synth_dir), "--prompts", str(synth_dir / "prompts"),
        "--k", "2", "--seed", "5", "--out", str(bank_dir),
    )
    config = tmp_path / "diverge.json"
    config.write_text(json.dumps({
        "train": {"base_lr": 5.0, "schedule": "constant", "weight_decay": 0.0,
                  "batch_size": 100000, "epochs": 5},
        "scoring": {"temperature": 0.005},
    }))
    code, _, err = run_cli(
        capsys,
        "train", "--data", str(synth_dir), "--bank", str(bank_dir),
        "--out", str(tmp_path / "diverged"), "--config", str(config), "--seed", "5",
    )
    assert code == 4
    assert json.loads(err)["error"]["type"] == "TrainingDivergedError"


def test_build_idempotent_and_inputs_untouched(tmp_path, capsys, synth_dir):
    run_cli(capsys, "split", "--data", str(synth_dir), "--seed", "5")
    before = dir_snapshot(synth_dir)
    banks = []
    for name in ("bank_a", "bank_b"):
        bank_dir = tmp_path / name
        code, _, _ = run_cli(
            capsys,
            "build", "--data", str(synth_dir), "--prompts", str(synth_dir / "prompts"),
            "--k", "2", "--seed", "9", "--out", str(bank_dir),
        )
        assert code == 0
        banks.append(dir_snapshot(bank_dir))
    assert banks[0] == banks[1]
    assert dir_snapshot(synth_dir) == before


def test_predict_jsonl(tmp_path, capsys, synth_dir):
    bank_dir = tmp_path / "bank"
    run_cli(
        capsys,
        "build", "--data", str(synth_dir), "--prompts", str(synth_dir / "prompts"),
        "--k", "2", "--seed", "5", "--out", str(bank_dir),
    )
    code, out, err = run_cli(
        capsys,
        "predict", "--bank", str(bank_dir), "--query", str(synth_dir / "features.bin"),
        "--topk", "1",
    )
    assert code == 0
    lines = [json.loads(line) for line in out.strip().splitlines()]
    assert len(lines) == 180  # 6 classes x 30 rows
    assert {"index", "class", "p_fused"} == set(lines[0])
    # effective config echo goes to stderr when stdout carries predictions
    assert "effective_config" in json.loads(err)


def test_predict_topk(tmp_path, capsys, synth_dir):
    bank_dir = tmp_path / "bank"
    run_cli(
        capsys,
        "build", "--data", str(synth_dir), "--prompts", str(synth_dir / "prompts"),
        "--k", "2", "--seed", "5", "--out", str(bank_dir),
    )
    out_file = tmp_path / "preds.jsonl"
    code, _, _ = run_cli(
        capsys,
        "predict", "--bank", str(bank_dir), "--query", str(synth_dir / "features.bin"),
        "--topk", "3", "--out", str(out_file),
    )
    assert code == 0
    lines = [json.loads(line) for line in out_file.read_text().strip().splitlines()]
    assert len(lines) == 180 * 3
    first = [rec for rec in lines if rec["index"] == 0]
    assert [rec["rank"] for rec in first] == [0, 1, 2]
    assert first[0]["p_fused"] >= first[1]["p_fused"] >= first[2]["p_fused"]


def test_effective_config_materializes_defaults(capsys, synth_dir):
    code, out, _ = run_cli(capsys, "split", "--data", str(synth_dir), "--seed", "1")
    assert code == 0
    cfg = json.loads(out)["effective_config"]
    assert cfg["kmeans"]["k"] == 16
    assert cfg["train"]["epochs"] == 30
    assert cfg["train"]["base_lr"] == 0.003
    assert cfg["scoring"]["temperature"] == 0.01
    assert cfg["scoring"]["ensemble"] == {"visual": 0.3, "text_max": 0.5, "text_avg": 0.5}
    assert cfg["split"]["ratios"] == [0.7, 0.1, 0.2]
