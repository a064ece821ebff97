import csv
import json
import math

import pytest

import metaxl


def test_scalar_meta_gradient_in_every_mode():
    for mode, tol in [("unrolled", 1e-9), ("analytic_expansion", 1e-9), ("fd_hvp", 1e-4)]:
        assert metaxl.scalar_meta_gradient(1.0, 0.0, 0.1, mode) == pytest.approx(0.32, abs=tol)


def test_span_f1_and_spans():
    gold = [["B-PER", "I-PER", "O", "B-LOC"]]
    pred = [["B-PER", "I-PER", "O", "O"]]
    p, r, f = metaxl.span_f1(gold, pred)
    assert (p, r) == (1.0, 0.5)
    assert f == pytest.approx(2 / 3)
    assert metaxl.extract_spans(["I-LOC", "I-LOC", "O"]) == [("LOC", 0, 1)]


def test_hausdorff_and_pca():
    s = [[1.0, 0.0], [0.0, 1.0]]
    assert metaxl.hausdorff(s, s) == 0.0
    assert metaxl.hausdorff([[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(1.0)
    assert metaxl.hausdorff(s, [[1.0, 0.0]], modified=True) == pytest.approx(0.25)
    r = metaxl.pca2([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    assert r["explained"][0] == pytest.approx(1.0)
    assert metaxl.pearson([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0)


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(metaxl.ContractError):
        metaxl.cosine_distance([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        metaxl.preset("no-such-preset")
    with pytest.raises(metaxl.ParseError):
        metaxl.config_hash("{ not json")
    with pytest.raises(OSError):
        metaxl.analyze_run(tmp_path / "missing")


def test_presets_and_hash():
    assert "table2-shape" in metaxl.preset_names()
    cfg = metaxl.preset("table2-shape")
    h = metaxl.config_hash(cfg)
    cfg["output_dir"] = "/somewhere/else"
    assert metaxl.config_hash(cfg) == h
    cfg["train"]["steps"] += 1
    assert metaxl.config_hash(cfg) != h


def test_generate_pair_is_deterministic():
    spec = {"sizes": {"source": 50, "target_train": 10, "target_dev": 5, "target_test": 5}}
    a = metaxl.generate_pair(spec)
    b = metaxl.generate_pair(spec)
    assert a == b
    assert len(a["source"]["examples"]) == 50
    assert 0.0 <= a["overlap"] <= 1.0


def test_study_analysis_and_checkpoint_eval(tmp_path):
    cfg = metaxl.preset("table2-shape")
    cfg["seeds"] = [0]
    cfg["methods"] = ["jt", "metaxl"]
    cfg["betas"] = [cfg["train"]["alpha"]]
    cfg["train"]["steps"] = 10
    cfg["train"]["eval_every"] = 5
    cfg["synthetic"]["sizes"] = {"source": 100, "target_train": 20, "target_dev": 10, "target_test": 10}
    cfg["rep_examples"] = 20
    cfg["output_dir"] = str(tmp_path / "run")
    report = metaxl.run_study(cfg)
    assert [c["cell"] for c in report["cells"]] == ["jt-s0", "metaxl-s0-p1-b0.4"]
    assert all(c["ok"] for c in report["cells"])

    with open(tmp_path / "run" / "metrics.csv") as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    assert [r["cell"] for r in rows] == ["jt-s0", "metaxl-s0-p1-b0.4"]

    analysis = metaxl.analyze_run(tmp_path / "run")
    assert analysis["config_hash"] == report["config_hash"]
    assert len(analysis["hausdorff"]) == 2
    assert analysis["correlations"] == []

    data_dir = tmp_path / "data"
    metaxl.export_pair(data_dir, cfg["synthetic"])
    test_file = next(p for p in data_dir.iterdir() if p.name.startswith("target_test"))
    result = metaxl.evaluate_checkpoint(tmp_path / "run" / "cells" / "jt-s0" / "checkpoint.bin", test_file)
    assert result["cell"] == "jt-s0"
    assert 0.0 <= result["f1"] <= 1.0 and math.isfinite(result["loss"])
