"""Point-wise detection metrics, DICE-optimal thresholds and grouped reports.

Zero-denominator conventions: precision is 1 when nothing is predicted
positive, recall is 1 when nothing is labelled positive, and DICE is the
harmonic mean of the two (0 when both are 0).  Points with a NaN score are
unevaluated and left out of the counts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "ConfusionCounts",
    "MetricSet",
    "confusion",
    "metrics",
    "best_threshold",
    "evaluate_scores",
    "aggregate_report",
    "write_report",
    "REPORT_COLUMNS",
]

METRIC_NAMES = ("acc", "ba", "precision", "recall", "dice")
REPORT_COLUMNS = ["part", "anomaly", "method", "acc", "ba", "precision", "recall", "dice",
                  "coverage", "threshold"]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricSet:
    acc: float
    ba: float
    precision: float
    recall: float
    dice: float

    def as_dict(self):
        return asdict(self)


def _evaluated(scores, labels):
    scores = np.asarray(scores, dtype=float)
    if labels is None:
        raise ValueError("metrics need ground-truth labels")
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    ok = ~np.isnan(scores)
    return scores[ok], labels[ok]


def confusion(scores, labels, threshold):
    """Counts for the rule ``score > threshold``; NaN scores are skipped."""
    s, y = _evaluated(scores, labels)
    pred = s > threshold
    tp = int(np.count_nonzero(pred & y))
    fp = int(np.count_nonzero(pred & ~y))
    fn = int(np.count_nonzero(~pred & y))
    return ConfusionCounts(tp, fn, fp, len(s) - tp - fp - fn)


def _ratio(num, den, empty):
    return num / den if den > 0 else empty


def metrics(counts):
    tp, fn, fp, tn = counts.tp, counts.fn, counts.fp, counts.tn
    precision = _ratio(tp, tp + fp, 1.0)
    recall = _ratio(tp, tp + fn, 1.0)
    specificity = _ratio(tn, tn + fp, 1.0)
    acc = _ratio(tp + tn, counts.total, 1.0)
    ba = 0.5 * (recall + specificity)
    dice = _ratio(2 * precision * recall, precision + recall, 0.0)
    return MetricSet(float(acc), float(ba), float(precision), float(recall), float(dice))


def _dice_curve(s, y, thresholds):
    """DICE for every threshold, from sorted cumulative counts."""
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_sorted = y[order].astype(np.int64)
    # points with score > t are those at positions >= searchsorted(t, 'right')
    cut = np.searchsorted(s_sorted, thresholds, side="right")
    pos_below = np.concatenate([[0], np.cumsum(pos_sorted)])[cut]
    total_pos = int(pos_sorted.sum())
    tp = total_pos - pos_below
    pred = len(s) - cut
    fp = pred - tp
    fn = total_pos - tp
    precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
    recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 1.0)
    den = precision + recall
    return np.where(den > 0, 2 * precision * recall / np.where(den > 0, den, 1), 0.0)


def best_threshold(scores, labels, grid=1000, exhaustive_limit=10_000):
    """Threshold with the highest DICE (lowest one on ties).

    Candidates are ``grid`` quantiles of the scores plus every distinct
    score when there are at most ``exhaustive_limit`` of them, plus one
    value below the minimum so that "everything positive" is on the table.
    """
    s, y = _evaluated(scores, labels)
    if not np.any(y):
        raise ValueError("best_threshold needs at least one positive label")
    distinct = np.unique(s)
    cands = [np.quantile(s, np.linspace(0, 1, grid))]
    if len(distinct) <= exhaustive_limit:
        cands.append(distinct)
    cands.append([np.nextafter(distinct[0], -np.inf)])
    cands = np.unique(np.concatenate(cands))
    dice = _dice_curve(s, y, cands)
    best = int(np.argmax(dice))  # first maximum = lowest threshold, cands ascending
    theta = float(cands[best])
    return theta, metrics(confusion(s, y, theta))


def evaluate_scores(scores, labels, threshold=None, grid=1000):
    """Metrics at ``threshold`` (or the DICE-optimal one) plus coverage."""
    scores = np.asarray(scores, dtype=float)
    coverage = float(np.mean(~np.isnan(scores))) if len(scores) else 0.0
    if threshold is None:
        threshold, ms = best_threshold(scores, labels, grid)
    else:
        ms = metrics(confusion(scores, labels, threshold))
    counts = confusion(scores, labels, threshold)
    return {"threshold": float(threshold), "coverage": coverage, **ms.as_dict(),
            "tp": counts.tp, "fn": counts.fn, "fp": counts.fp, "tn": counts.tn}


def aggregate_report(records, keys=("part", "anomaly", "method")):
    """Mean and population standard deviation of each metric per group.

    ``records`` are dicts holding the group ``keys`` and metric values
    (``MetricSet`` instances are expanded).
    """
    if not records:
        raise ValueError("no records to aggregate")
    groups = {}
    for rec in records:
        flat = dict(rec)
        for k, v in rec.items():
            if isinstance(v, MetricSet):
                flat.pop(k)
                flat.update(v.as_dict())
        groups.setdefault(tuple(flat.get(k, "") for k in keys), []).append(flat)
    rows = []
    for gkey, items in groups.items():
        row = dict(zip(keys, gkey))
        row["n"] = len(items)
        for name in METRIC_NAMES + ("coverage", "threshold"):
            vals = np.array([float(it[name]) for it in items if it.get(name, "") != ""], dtype=float)
            if len(vals) == 0:
                continue
            row[name] = float(vals.mean())
            row[name + "_std"] = float(vals.std())
        rows.append(row)
    return rows


def _cell(key, value):
    if not isinstance(value, float):
        return value
    # thresholds live on the score scale, which can be tiny
    return f"{value:.6g}" if key.startswith("threshold") else f"{value:.4f}"


def write_report(rows, csv_path, json_path=None):
    """CSV with the fixed report columns first, then ``n`` and ``*_std`` columns."""
    extra = []
    for row in rows:
        for k in row:
            if k not in REPORT_COLUMNS and k not in extra:
                extra.append(k)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS + extra, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(k, v) for k, v in row.items()})
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({"rows": rows, "conventions": __doc__.split("\n\n")[1].replace("\n", " ")}, fh, indent=2)
