import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from profile_rpca.evaluation import (
    REPORT_COLUMNS,
    ConfusionCounts,
    MetricSet,
    aggregate_report,
    best_threshold,
    confusion,
    evaluate_scores,
    metrics,
    write_report,
)


def loop_counts(scores, labels, theta):
    tp = fn = fp = tn = 0
    for s, y in zip(scores, labels):
        if np.isnan(s):
            continue
        pred = s > theta
        if pred and y:
            tp += 1
        elif pred:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return tp, fn, fp, tn


def direct_metrics(tp, fn, fp, tn):
    """Single-pass formulas with the documented conventions."""
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    n = tp + fn + fp + tn
    return {"acc": (tp + tn) / n if n else 1.0, "ba": (r + spec) / 2, "precision": p, "recall": r,
            "dice": 2 * p * r / (p + r) if p + r else 0.0}


def exhaustive_best(scores, labels):
    best = -1.0
    for t in np.concatenate([np.unique(scores), [np.nextafter(scores.min(), -np.inf)]]):
        best = max(best, metrics(confusion(scores, labels, t)).dice)
    return best


# counting

def test_confusion_example():
    c = confusion([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0], 0.5)
    assert (c.tp, c.tn, c.fp, c.fn) == (2, 2, 0, 0)


def test_all_zero_scores_predict_nothing():
    c = confusion(np.zeros(6), [1, 0, 1, 1, 0, 0], 0.0)
    assert c.tp == 0 and c.fp == 0 and c.fn == 3


def test_confusion_matches_loop(rng):
    s, y = rng.random(10_000), rng.integers(0, 2, 10_000)
    s[::97] = np.nan
    c = confusion(s, y, 0.37)
    assert (c.tp, c.fn, c.fp, c.tn) == loop_counts(s, y, 0.37)
    assert c.total == np.count_nonzero(~np.isnan(s))


def test_confusion_needs_labels():
    with pytest.raises(ValueError):
        confusion([0.1], None, 0.0)
    with pytest.raises(ValueError):
        confusion([0.1, 0.2], [1], 0.0)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


# metrics

def test_metrics_example():
    m = metrics(ConfusionCounts(tp=90, fn=10, fp=10, tn=890))
    assert m.precision == pytest.approx(0.9)
    assert m.recall == pytest.approx(0.9)
    assert m.acc == pytest.approx(0.98)
    assert m.ba == pytest.approx((0.9 + 890 / 900) / 2)
    assert m.ba == pytest.approx(0.9444, abs=1e-4)
    assert m.dice == pytest.approx(0.9)


def test_no_anomalies_conventions():
    clean = metrics(ConfusionCounts(0, 0, 0, 50))
    assert clean.recall == 1.0 and clean.precision == 1.0 and clean.dice == 1.0
    noisy = metrics(ConfusionCounts(0, 0, 3, 47))
    assert noisy.recall == 1.0 and noisy.dice == 0.0


def test_counts_behind_published_row():
    # counts chosen to match the Part2 hole row of the results table
    m = metrics(ConfusionCounts(tp=895, fn=46, fp=24, tn=99035))
    for got, want in [(m.acc, 0.9993), (m.ba, 0.9755), (m.precision, 0.9737), (m.recall, 0.9513),
                      (m.dice, 0.9621)]:
        assert got == pytest.approx(want, abs=5e-4)


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_metrics_identities(tp, fn, fp, tn):
    m = metrics(ConfusionCounts(tp, fn, fp, tn))
    d = direct_metrics(tp, fn, fp, tn)
    for k, v in d.items():
        assert getattr(m, k) == pytest.approx(v, abs=1e-12)
    spec = tn / (tn + fp) if tn + fp else 1.0
    assert abs(m.ba - (m.recall + spec) / 2) <= 1e-12
    for v in m.as_dict().values():
        assert 0.0 <= v <= 1.0


@given(st.integers(0, 2**31), st.floats(0, 1))
def test_metrics_of_confusion_single_pass(seed, theta):
    r = np.random.default_rng(seed)
    s, y = r.random(300), r.integers(0, 2, 300)
    m = metrics(confusion(s, y, theta))
    d = direct_metrics(*loop_counts(s, y, theta))
    for k, v in d.items():
        assert getattr(m, k) == pytest.approx(v, abs=1e-12)


# thresholds

def test_separable_scores_lowest_tie():
    s = np.array([0.1, 0.2, 0.3, 0.7, 0.8])
    y = np.array([0, 0, 0, 1, 1])
    theta, m = best_threshold(s, y)
    assert m.dice == 1.0
    assert theta == 0.3


def test_noisy_labels_beat_median_threshold(rng):
    y = rng.integers(0, 2, 2000)
    s = y + rng.uniform(0, 0.4, 2000) * rng.choice([-1, 1], 2000)
    _, m = best_threshold(s, y)
    assert m.dice >= metrics(confusion(s, y, np.median(s))).dice


@given(st.integers(0, 2**31), st.floats(0.01, 0.5))
def test_grid_sweep_matches_exhaustive(seed, frac):
    r = np.random.default_rng(seed)
    y = (r.random(1000) < frac).astype(int)
    if not y.any():
        y[0] = 1
    s = np.round(r.random(1000) + y * r.random(), 3)
    _, m = best_threshold(s, y)
    assert abs(m.dice - exhaustive_best(s, y)) <= 1e-12


@given(st.integers(0, 2**31), st.floats(-0.5, 1.5))
def test_best_dominates_any_threshold(seed, theta):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, 400)
    s = r.random(400) + 0.3 * y
    _, m = best_threshold(s, y)
    assert m.dice >= metrics(confusion(s, y, theta)).dice


def test_everything_positive_is_a_candidate():
    # one label, highest score is a negative: the best rule flags everything
    s = np.array([0.5, 0.9])
    y = np.array([1, 0])
    theta, m = best_threshold(s, y)
    assert m.dice == pytest.approx(2 / 3)
    assert theta < 0.5


def test_best_threshold_needs_positives():
    with pytest.raises(ValueError):
        best_threshold([0.1, 0.2], [0, 0])


def test_large_input_uses_quantile_grid(rng):
    y = (rng.random(50_000) < 0.02).astype(int)
    s = rng.random(50_000) + y
    theta, m = best_threshold(s, y)
    assert m.dice > 0.95


def test_evaluate_scores_reports_coverage():
    s = np.array([np.nan, 0.9, 0.1, np.nan])
    out = evaluate_scores(s, [1, 1, 0, 0])
    assert out["coverage"] == 0.5
    assert out["dice"] == 1.0
    assert out["tp"] + out["fn"] + out["fp"] + out["tn"] == 2
    fixed = evaluate_scores(s, [1, 1, 0, 0], threshold=0.95)
    assert fixed["threshold"] == 0.95 and fixed["tp"] == 0


# reporting

def test_aggregate_single_and_pair():
    rows = aggregate_report([{"part": "part1", "anomaly": "hole", "method": "ours", "acc": 1, "ba": 1,
                              "precision": 1, "recall": 1, "dice": 0.9, "coverage": 1, "threshold": 0.1}])
    assert rows[0]["dice"] == 0.9 and rows[0]["dice_std"] == 0.0 and rows[0]["n"] == 1
    recs = [{"part": "p", "anomaly": "hole", "method": "ours", **MetricSet(1, 1, 1, 1, d).as_dict()}
            for d in (0.9, 0.8)]
    row = aggregate_report(recs)[0]
    assert row["dice"] == pytest.approx(0.85) and row["dice_std"] == pytest.approx(0.05)


def test_aggregate_groups_and_expands_metric_sets():
    recs = [{"part": "a", "anomaly": "hole", "method": "ours", "m": MetricSet(1, 1, 1, 1, 0.5)},
            {"part": "b", "anomaly": "hole", "method": "ours", "m": MetricSet(1, 1, 1, 1, 0.7)},
            {"part": "a", "anomaly": "hole", "method": "ours", "m": MetricSet(1, 1, 1, 1, 0.9)}]
    rows = {r["part"]: r for r in aggregate_report(recs)}
    assert rows["a"]["n"] == 2 and rows["a"]["dice"] == pytest.approx(0.7)
    assert rows["b"]["dice"] == 0.7


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate_report([])


def test_thirty_sample_table_row(tmp_path, rng):
    recs = [{"part": "part2", "anomaly": "hole", "method": "ours", "coverage": 0.97, "threshold": 0.0042,
             **MetricSet(*rng.uniform(0.9, 1.0, 5)).as_dict()} for _ in range(30)]
    rows = aggregate_report(recs)
    csv_path, json_path = tmp_path / "r.csv", tmp_path / "r.json"
    write_report(rows, str(csv_path), str(json_path))
    with open(csv_path) as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0])[:len(REPORT_COLUMNS)] == REPORT_COLUMNS
    assert len(table) == 1 and table[0]["n"] == "30"
    assert table[0]["threshold"] == "0.0042"
    assert len(table[0]["dice"].split(".")[1]) == 4
    payload = json.loads(json_path.read_text())
    assert payload["rows"][0]["n"] == 30
    assert "precision is 1" in payload["conventions"]
