"""State-recognition and injection-estimation metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

REPORT_COLUMNS = ("dataset", "fold", "appliance", "accuracy", "recall", "precision", "f1",
                  "rmse_norm", "mae_norm", "rmse_watts", "mae_watts")

#: probabilities at or above this count as ON
DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


class ClassMetrics(NamedTuple):
    accuracy: float
    recall: float
    precision: float
    f1: float


@dataclass(frozen=True)
class CvSummary:
    values: tuple[float, ...]
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.4f}±{self.std:.4f}"


def binarize(probs, threshold: float = DECISION_THRESHOLD) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.uint8)


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool).ravel()
    truth = np.asarray(truth).astype(bool).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def classification_metrics(c: ConfusionCounts) -> ClassMetrics:
    """Accuracy, recall, precision, F1; undefined ratios count as 0.

    With no decisions at all accuracy is 1 (nothing was misclassified).
    """
    accuracy = _ratio(c.tp + c.tn, c.total) if c.total else 1.0
    recall = _ratio(c.tp, c.tp + c.fn)
    precision = _ratio(c.tp, c.tp + c.fp)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return ClassMetrics(accuracy, recall, precision, f1)


def macro_average(per_appliance) -> ClassMetrics:
    rows = np.asarray(list(per_appliance), dtype=np.float64)
    if rows.size == 0:
        raise ValueError("macro average of an empty list")
    return ClassMetrics(*(float(v) for v in rows.mean(axis=0)))


def regression_metrics(pred, truth) -> tuple[float, float]:
    """``(rmse, mae)`` over all entries."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ValueError("regression metrics need at least one value")
    err = pred - truth
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def aggregate_cv(fold_values) -> CvSummary:
    vals = tuple(float(v) for v in fold_values)
    if not vals:
        raise ValueError("no folds to aggregate")
    arr = np.array(vals)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return CvSummary(vals, float(arr.mean()), std)


def write_report(path, rows) -> None:
    """Write metric rows (dicts keyed by :data:`REPORT_COLUMNS`); blanks for n/a."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in REPORT_COLUMNS})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def read_report(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k in REPORT_COLUMNS:
                v = row.get(k, "")
                if k in ("dataset", "fold", "appliance"):
                    parsed[k] = v
                else:
                    parsed[k] = float(v) if v != "" else None
            out.append(parsed)
    return out
