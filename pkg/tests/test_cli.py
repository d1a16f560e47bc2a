import json

import pandas as pd
import pytest

from pmb_nll.cli import build_parser, main
from pmb_nll.data import read_ground_truth, read_predictions
from pmb_nll.density import log_ppp_intensity
from pmb_nll.errors import EXIT_IO_ERROR, EXIT_OK, EXIT_SCHEMA_ERROR, EXIT_USAGE_ERROR
from pmb_nll.ppp import build_pmb
from pmb_nll.workflows.evaluate import EvaluationSettings, evaluate_image


def _evaluate(toy_files, tmp_path, *extra, name="report.csv"):
    gt_path, preds_path = toy_files
    out = tmp_path / name
    code = main(["evaluate", str(gt_path), str(preds_path), "--out", str(out), "--jobs", "1", *extra])
    return code, out


def test_parser_accepts_verbose_after_subcommand():
    args = build_parser().parse_args(["selftest", "--verbose", "--iterations", "3"])
    assert args.verbose
    assert args.iterations == 3


def test_evaluate_matches_library_calls(toy_files, tmp_path):
    code, out = _evaluate(toy_files, tmp_path)
    assert code == EXIT_OK
    rows = pd.read_csv(out)
    assert rows["image_id"].tolist() == [1, 2, 3]

    dataset = read_ground_truth(toy_files[0])
    predictions = read_predictions(toy_files[1], dataset.label_map)
    expected = [
        evaluate_image(i, predictions[i], dataset.objects_for(i), EvaluationSettings()).report.nll
        for i in (1, 2, 3)
    ]
    assert rows["nll"].tolist() == pytest.approx(expected, rel=1e-12)
    aggregate = pd.read_csv(tmp_path / "report_aggregate.csv")
    assert aggregate.loc[0, "mean_nll"] == pytest.approx(sum(expected) / 3, rel=1e-12)


def test_single_assignment_equals_decomposition(toy_files, tmp_path):
    code, out = _evaluate(toy_files, tmp_path, "--q", "1")
    assert code == EXIT_OK
    rows = pd.read_csv(out)
    terms = rows[["regression", "classification", "false_detection", "missed_match", "ppp_rate"]].sum(axis=1)
    assert rows["nll"].tolist() == pytest.approx(terms.tolist(), rel=1e-9)
    assert (rows["q_used"] == 1).all()


def test_threshold_one_is_pure_poisson(toy_files, tmp_path):
    code, out = _evaluate(toy_files, tmp_path, "--r-threshold", "1.0", "--no-nms")
    assert code == EXIT_OK
    rows = pd.read_csv(out).set_index("image_id")
    assert (rows["num_matched"] == 0).all()
    assert rows.loc[3, "nll"] == pytest.approx(0.3)

    dataset = read_ground_truth(toy_files[0])
    predictions = read_predictions(toy_files[1], dataset.label_map)
    pmb = build_pmb(predictions[1], 1.0)
    expected = pmb.ppp.expected_cardinality - sum(log_ppp_intensity(pmb.ppp, y) for y in dataset.objects_for(1))
    assert rows.loc[1, "nll"] == pytest.approx(expected, rel=1e-12)


def test_json_report_and_histograms(toy_files, tmp_path):
    hist = tmp_path / "hist.csv"
    code, out = _evaluate(toy_files, tmp_path, "--format", "json", "--histograms", str(hist), name="report.json")
    assert code == EXIT_OK
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["aggregate"]["num_images"] == 3
    assert not pd.read_csv(hist).empty


def test_decompose_writes_histograms(toy_files, tmp_path):
    gt_path, preds_path = toy_files
    out = tmp_path / "hist.csv"
    assert main(["decompose", str(gt_path), str(preds_path), "--out", str(out), "--jobs", "1"]) == EXIT_OK
    hist = pd.read_csv(out)
    assert set(hist["term"]) >= {"regression", "classification"}


def test_schema_error_exit_code(toy_files, tmp_path):
    gt_path, _ = toy_files
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 7, "image_id": 1, "detections": []}), encoding="utf-8")
    code = main(["evaluate", str(gt_path), str(bad), "--out", str(tmp_path / "r.csv")])
    assert code == EXIT_SCHEMA_ERROR


def test_unknown_prediction_image_is_schema_error(toy_files, tmp_path):
    gt_path, _ = toy_files
    preds = tmp_path / "extra.json"
    preds.write_text(json.dumps({"schema_version": 1, "image_id": 99, "detections": []}), encoding="utf-8")
    assert main(["evaluate", str(gt_path), str(preds), "--out", str(tmp_path / "r.csv")]) == EXIT_SCHEMA_ERROR


def test_missing_file_exit_code(toy_files, tmp_path):
    _, preds_path = toy_files
    code = main(["evaluate", str(tmp_path / "nope.json"), str(preds_path), "--out", str(tmp_path / "r.csv")])
    assert code == EXIT_IO_ERROR


def test_invalid_q_exit_code(toy_files, tmp_path):
    code, _ = _evaluate(toy_files, tmp_path, "--q", "0")
    assert code == EXIT_USAGE_ERROR


def test_results_do_not_depend_on_worker_count(toy_files, tmp_path):
    _, one = _evaluate(toy_files, tmp_path, name="one.csv")
    gt_path, preds_path = toy_files
    two = tmp_path / "two.csv"
    assert main(["evaluate", str(gt_path), str(preds_path), "--out", str(two), "--jobs", "2"]) == EXIT_OK
    assert one.read_bytes() == two.read_bytes()


def test_compare_detr(toy_files, tmp_path):
    gt_path, preds_path = toy_files
    out = tmp_path / "cmp.csv"
    code = main(["compare-detr", str(gt_path), str(preds_path), "--out", str(out), "--log-class"])
    assert code == EXIT_OK
    rows = pd.read_csv(out, keep_default_na=False).set_index("image_id")
    assert rows.index.tolist() == [1, 2, 3]
    assert not rows["skipped"].astype(bool).any()
    assert rows["agree"].astype(str).tolist() == ["True", "True", "True"]
    # image 3 has no objects: agreement is vacuous
    assert rows.loc[3, "num_objects"] == 0
    assert (tmp_path / "cmp_disagreements.csv").exists()


def test_compare_skips_prediction_deficit(toy_files, tmp_path):
    gt_path, _ = toy_files
    preds = tmp_path / "few.json"
    preds.write_text(json.dumps({"schema_version": 1, "image_id": 1, "detections": []}), encoding="utf-8")
    out = tmp_path / "cmp.csv"
    assert main(["compare-detr", str(gt_path), str(preds), "--out", str(out)]) == EXIT_OK
    rows = pd.read_csv(out, keep_default_na=False).set_index("image_id")
    assert rows.loc[1, "reason"] == "prediction deficit"
    assert rows.loc[2, "reason"] == "prediction deficit"


def test_selftest_command(capsys):
    code = main(["selftest", "--iterations", "5", "--property", "murty_prefix"])
    assert code == EXIT_OK
    assert "PASS murty_prefix" in capsys.readouterr().out


def test_selftest_corrupt_fails():
    assert main(["selftest", "--iterations", "5", "--debug-corrupt", "--property", "murty_prefix"]) == 4


def test_null_category_is_schema_error(toy_files, tmp_path):
    gt_path, preds_path = toy_files
    doc = json.loads(gt_path.read_text(encoding="utf-8"))
    doc["annotations"][0]["category_id"] = None
    bad = tmp_path / "bad_gt.json"
    bad.write_text(json.dumps(doc), encoding="utf-8")
    assert main(["evaluate", str(bad), str(preds_path), "--out", str(tmp_path / "r.csv")]) == EXIT_SCHEMA_ERROR


def test_non_object_detection_is_schema_error(toy_files, tmp_path):
    gt_path, _ = toy_files
    preds = tmp_path / "bad.json"
    preds.write_text(json.dumps({"schema_version": 1, "image_id": 1, "detections": [3]}), encoding="utf-8")
    assert main(["evaluate", str(gt_path), str(preds), "--out", str(tmp_path / "r.csv")]) == EXIT_SCHEMA_ERROR
