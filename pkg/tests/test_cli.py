import json
import os

import numpy as np
import pytest

from facetouch.cli import main
from facetouch.config import config_hash, load_config
from facetouch.errors import MalformedManifest


def run(args):
    return main(args)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--out", str(root / "train"), "--videos", "8",
                "--frames", "80", "--seed", "31", "--no-render"]) == 0
    assert run(["synth", "--out", str(root / "test"), "--videos", "4",
                "--frames", "80", "--seed", "32", "--no-render"]) == 0
    for name in ("train", "test"):
        assert run(["extract", "--manifest",
                    str(root / name / "manifest.json"),
                    "--out", str(root / f"{name}.csv")]) == 0
    return root


def test_extract_row_count(workdir):
    rows = [l for l in open(workdir / "train.csv")
            if not l.startswith("#")]
    assert len(rows) - 1 == 8 * 80


def test_extract_deterministic(workdir, tmp_path):
    out = tmp_path / "again.csv"
    assert run(["extract", "--manifest",
                str(workdir / "train" / "manifest.json"),
                "--out", str(out)]) == 0
    assert out.read_bytes() == (workdir / "train.csv").read_bytes()


def test_synth_deterministic(workdir, tmp_path):
    assert run(["synth", "--out", str(tmp_path / "re"), "--videos", "8",
                "--frames", "80", "--seed", "31", "--no-render"]) == 0
    a = (tmp_path / "re" / "mullen.csv").read_bytes()
    b = (workdir / "train" / "mullen.csv").read_bytes()
    assert a == b


def test_train_eval_predict_correlate(workdir, tmp_path):
    model_path = tmp_path / "model.json"
    hyper = json.dumps({"pca_threshold": 0.95, "C": 10.0, "gamma": "scale"})
    assert run(["train", "--features", str(workdir / "train.csv"),
                "--variant", "rf-pca-svm", "--task", "binary",
                "--out", str(model_path), "--seed", "2",
                "--hyper", hyper]) == 0
    report = tmp_path / "report.json"
    text = tmp_path / "report.txt"
    assert run(["evaluate", "--model", str(model_path),
                "--features", str(workdir / "test.csv"),
                "--train-features", str(workdir / "train.csv"),
                "--out", str(report), "--text", str(text),
                "--configuration", "train-31 test-32"]) == 0
    doc = json.load(open(report))
    rows = doc["configurations"][0]["rows"]
    assert [r["model"] for r in rows] == ["Random Chance", "Zero Rule",
                                          "rf-pca-svm"]
    model_row = rows[2]
    assert model_row["mcnemar_vs_zeror"]["p_value"] <= 1.0
    assert model_row["mcnemar_vs_random"] is not None
    body = text.read_text()
    assert "Accuracy" in body and "Precision On Head" in body

    pred = tmp_path / "pred.csv"
    assert run(["predict", "--model", str(model_path),
                "--features", str(workdir / "test.csv"),
                "--out", str(pred),
                "--manifest", str(workdir / "test" / "manifest.json")]) == 0
    lines = [l for l in open(pred) if not l.startswith("#")]
    assert lines[0].strip() == "video_id,infant_id,frame_index,on_head"
    assert len(lines) - 1 == 4 * 80

    corr = tmp_path / "corr.json"
    assert run(["correlate", "--predictions", str(pred),
                "--mullen", str(workdir / "test" / "mullen.csv"),
                "--out", str(corr)]) == 0
    cdoc = json.load(open(corr))
    assert cdoc["n_infants"] == 4
    assert "r" in cdoc["fm"] and "r" in cdoc["gm"]


def test_error_is_machine_readable(tmp_path, capsys):
    rc = run(["extract", "--manifest", str(tmp_path / "nope.json"),
              "--out", str(tmp_path / "x.csv")])
    assert rc == 1
    err = capsys.readouterr().err
    doc = json.loads(err)
    assert doc["error"] == "MissingFile"


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preprocesss": {}}))
    with pytest.raises(MalformedManifest):
        load_config(str(path))


def test_config_merge_and_hash(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preprocess": {"median_window": 7}}))
    cfg = load_config(str(path))
    assert cfg["preprocess"]["median_window"] == 7
    assert cfg["preprocess"]["mean_window"] == 3
    assert config_hash(cfg) != config_hash(load_config(None))


def test_grid_config_reaches_pipeline(workdir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"grid": {"C": [10.0], "gamma": ["scale"], "pca_threshold": [0.95]},
         "folds": 4}))
    out = tmp_path / "m.json"
    assert run(["--config", str(cfg_path), "train",
                "--features", str(workdir / "train.csv"),
                "--variant", "rf-pca-svm", "--task", "binary",
                "--out", str(out), "--seed", "5"]) == 0
    doc = json.load(open(out))
    assert len(doc["cv_table"]) == 1  # the shrunken grid
    assert doc["chosen"] == {"pca_threshold": 0.95, "C": 10.0,
                             "gamma": "scale"}
