from __future__ import annotations

import csv
import json

import pytest

from gistkit.cli import main
from gistkit.pipeline import RunConfig, run_pipeline

FAST_FLAGS = ["--k", "2", "--lambda", "0.5", "--features", "default", "--tier-mode", "percentile", "--pretrain-epochs", "2", "--epochs", "1"]


@pytest.fixture(scope="module")
def sessions(tmp_path_factory):
    d = tmp_path_factory.mktemp("sessions")
    for seed in (1, 2):
        assert main(["synth", "--group-size", "3", "--phases", "2", "--seed", str(seed), "-o", str(d / f"g{seed}.jsonl")]) == 0
    return d


@pytest.fixture(scope="module")
def run_dir(sessions, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", str(sessions), "--out", str(out), *FAST_FLAGS]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_writes_truth(sessions):
    assert sorted(p.name for p in sessions.iterdir()) == ["g1.jsonl", "g1.truth.csv", "g2.jsonl", "g2.truth.csv"]


def test_run_exports(run_dir):
    per = run_dir / "sessions" / "g1"
    assert _rows(per / "sociograms.csv")[0] == ["window_index", "modality", "src", "dst", "weight"]
    assert _rows(per / "metrics.csv")[0] == ["window_index", "modality", "metric", "node_or_graph", "value", "tier"]
    assert _rows(per / "features.csv")[0] == ["dyad_i", "dyad_j", "bin_start", "feature_name", "raw_value", "z_value"]
    assert _rows(per / "labels.csv")[0] == ["dyad_i", "dyad_j", "window_index", "cluster"]
    fw = json.loads((per / "fusion_weights.json").read_text())
    assert {"alpha_conv", "alpha_att", "alpha_prox"} <= set(fw)
    assert abs(fw["alpha_conv"] + fw["alpha_att"] + fw["alpha_prox"] - 1) < 1e-9
    assert isinstance(json.loads((run_dir / "retained_features.json").read_text()), list)
    for name in ("cluster_shares.json", "membership_entropy.csv", "associations.csv", "ablation.json",
                 "classification_report.json", "model.json"):
        assert (run_dir / name).exists(), name
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config_hash"] == RunConfig.from_json(manifest["config"]).digest()
    assert "sessions/g1/labels.csv" in manifest["files"]
    assert set(manifest["seeds"]) == {"train", "fast_eval"}


def test_tiers_are_named(run_dir):
    rows = _rows(run_dir / "sessions" / "g2" / "metrics.csv")[1:]
    assert {r[5] for r in rows} <= {"low", "medium", "high"}


def test_rerun_is_byte_identical(sessions, run_dir, tmp_path):
    assert main(["run", str(sessions), "--out", str(tmp_path), *FAST_FLAGS]) == 0
    a = json.loads((run_dir / "manifest.json").read_text())
    b = json.loads((tmp_path / "manifest.json").read_text())
    assert a["files"] == b["files"]
    assert (run_dir / "manifest.json").read_bytes() == (tmp_path / "manifest.json").read_bytes()


def test_saved_model_reproduces_labels(sessions, run_dir, tmp_path):
    code = main(["cluster", str(sessions), "--out", str(tmp_path), "--skip-train",
                 "--model", str(run_dir / "model.json"), "--features", "default"])
    assert code == 0
    for g in ("g1", "g2"):
        assert (tmp_path / "sessions" / g / "labels.csv").read_bytes() == (run_dir / "sessions" / g / "labels.csv").read_bytes()


def test_stage_subset(sessions, tmp_path):
    report = run_pipeline([sessions / "g1.jsonl"], tmp_path, RunConfig(), stages=["sociogram"])
    assert report.labels is None
    assert (tmp_path / "sessions" / "g1" / "sociograms.json").exists()
    assert not (tmp_path / "sessions" / "g1" / "metrics.csv").exists()
    with pytest.raises(ValueError):
        run_pipeline([sessions / "g1.jsonl"], tmp_path, RunConfig(), stages=["bogus"])


def test_cli_errors(sessions, tmp_path, capsys):
    assert main(["cluster", str(sessions), "--out", str(tmp_path), "--skip-train"]) == 1
    assert main(["run", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path), "--tier-mode", "fixed"]) == 1
    assert main(["metrics", str(sessions), "--out", str(tmp_path)]) == 1
    assert "--tier-mode" in capsys.readouterr().err
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"windw": 10}))
    assert main(["run", str(sessions), "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_tier_mode_from_config_file(sessions, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tier_mode": "zscore"}))
    assert main(["metrics", str(sessions / "g1.jsonl"), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "sessions" / "g1" / "metrics.csv")
    assert {r[5] for r in rows[1:]} <= {"low", "medium", "high"}
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]["tier_mode"] == "zscore"


def test_validate_exit_codes(sessions, tmp_path, capsys):
    assert main(["validate", str(sessions / "g1.jsonl")]) == 0
    broken = tmp_path / "broken.jsonl"
    broken.write_text("not json\n")
    assert main(["validate", str(broken)]) == 2
    lines = (sessions / "g1.jsonl").read_text().splitlines()
    speech = next(i for i, ln in enumerate(lines) if '"speech"' in ln)
    rec = json.loads(lines[speech])
    rec["end"] = rec["start"] - 1
    lines[speech] = json.dumps(rec)
    invalid = tmp_path / "invalid.jsonl"
    invalid.write_text("\n".join(lines) + "\n")
    assert main(["validate", str(invalid)]) == 1
    assert "invalid.jsonl" in capsys.readouterr().out
