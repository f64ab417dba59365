import numpy as np
import pytest

from roadlabel.metrics import (MetricsReport, confusion, format_table,
                               metrics_from_counts, reports_to_json)


def test_confusion_perfect():
    mask = np.random.default_rng(0).random((8, 8)) > 0.5
    tp, fp, fn, tn = confusion(mask, mask)
    assert fp == 0 and fn == 0
    assert tp == int(mask.sum())


def test_confusion_inverse():
    pred = np.ones((4, 4), dtype=bool)
    gt = np.zeros((4, 4), dtype=bool)
    tp, fp, fn, tn = confusion(pred, gt)
    assert (tp, fp, fn, tn) == (0, 16, 0, 0)


def test_confusion_half_coverage_toy():
    # gt road = left half (8 px), pred covers exactly half of it, no extras
    gt = np.zeros((4, 4), dtype=bool)
    gt[:, :2] = True
    pred = np.zeros((4, 4), dtype=bool)
    pred[:2, :2] = True
    m = metrics_from_counts(*confusion(pred, gt)[:3])
    assert m["recall"] == pytest.approx(0.5)
    assert m["precision"] == pytest.approx(1.0)
    assert m["iou"] == pytest.approx(0.5)
    assert m["f1"] == pytest.approx(2.0 / 3.0)


def test_confusion_counts_sum():
    rng = np.random.default_rng(1)
    pred = rng.random((13, 17)) > 0.4
    gt = rng.random((13, 17)) > 0.6
    assert sum(confusion(pred, gt)) == 13 * 17


def test_confusion_dim_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2), bool), np.zeros((3, 2), bool))


def test_metric_ordering_random_masks():
    rng = np.random.default_rng(2)
    for _ in range(100):
        pred = rng.random((10, 10)) > rng.uniform(0.2, 0.8)
        gt = rng.random((10, 10)) > rng.uniform(0.2, 0.8)
        m = metrics_from_counts(*confusion(pred, gt)[:3])
        if m["precision"] + m["recall"] > 0:
            assert m["iou"] <= min(m["precision"], m["recall"]) + 1e-12
            assert min(m["precision"], m["recall"]) <= m["f1"] + 1e-12
        assert m["iou"] <= m["f1"] + 1e-12


def test_aggregate_equals_concatenated():
    rng = np.random.default_rng(3)
    report = MetricsReport("test")
    preds, gts = [], []
    for i in range(5):
        pred = rng.random((6, 9)) > 0.5
        gt = rng.random((6, 9)) > 0.5
        report.add(f"f{i}", pred, gt)
        preds.append(pred)
        gts.append(gt)
    concat = metrics_from_counts(
        *confusion(np.concatenate(preds), np.concatenate(gts))[:3])
    agg = report.aggregate()
    for key in concat:
        assert agg[key] == pytest.approx(concat[key], abs=1e-12)


def test_f1_definition_holds():
    report = MetricsReport("t")
    rng = np.random.default_rng(4)
    report.add("f", rng.random((5, 5)) > 0.5, rng.random((5, 5)) > 0.5)
    agg = report.aggregate()
    p, r = agg["precision"], agg["recall"]
    if p + r > 0:
        assert agg["f1"] == pytest.approx(2 * p * r / (p + r))


def test_macro_average():
    report = MetricsReport("t")
    gt = np.zeros((2, 2), dtype=bool)
    gt[0, 0] = True
    report.add("a", gt, gt)                       # iou 1
    report.add("b", np.zeros((2, 2), bool), gt)   # iou 0
    assert report.macro()["iou"] == pytest.approx(0.5)
    assert report.aggregate()["iou"] == pytest.approx(0.5)


def test_table_and_json_shapes():
    reports = [MetricsReport("row A"), MetricsReport("row B longer name")]
    gt = np.ones((2, 2), dtype=bool)
    for r in reports:
        r.add("f", gt, gt)
    table = format_table(reports)
    lines = table.splitlines()
    assert len(lines) == 2 + len(reports)
    assert "row B longer name" in table
    assert "100.0" in table
    import json
    parsed = json.loads(reports_to_json(reports))
    assert [p["tag"] for p in parsed] == ["row A", "row B longer name"]
