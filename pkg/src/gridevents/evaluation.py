"""Classification metrics and the feature/size/rate comparison experiments.

Per-class precision, recall and F1 treat each class against the rest;
macro averaging weighs every class equally (absent classes contribute 0),
weighted averaging weighs by true-class frequency, which makes weighted
recall identical to accuracy. Any 0/0 quotient is defined as 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import N_CLASSES


class LengthMismatch(ValueError):
    """Truth and prediction sequences differ in length."""


class BadLabel(ValueError):
    """A label is outside 0..3."""


class EmptyMatrix(ValueError):
    """Metrics need at least one evaluated instance."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """4x4 count matrix; rows are the true class, columns the predicted."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}")
        if (counts < 0).any():
            raise ValueError("confusion matrix counts must be >= 0")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: tuple[ClassMetrics, ...]
    macro: tuple[float, float, float]      # (precision, recall, f1)
    weighted: tuple[float, float, float]
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": [
                {"class": k, "precision": m.precision, "recall": m.recall, "f1": m.f1,
                 "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn}
                for k, m in enumerate(self.per_class)
            ],
            "macro": {"precision": self.macro[0], "recall": self.macro[1], "f1": self.macro[2]},
            "weighted": {"precision": self.weighted[0], "recall": self.weighted[1],
                         "f1": self.weighted[2]},
            "confusion": self.confusion.counts.tolist(),
        }


def confusion(truths: Sequence[int], preds: Sequence[int]) -> ConfusionMatrix:
    """Tally (true, predicted) label pairs into the 4x4 matrix."""
    truths = np.asarray(truths, dtype=int)
    preds = np.asarray(preds, dtype=int)
    if truths.shape != preds.shape:
        raise LengthMismatch(f"{len(truths)} truths vs {len(preds)} predictions")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    if truths.size:
        if truths.min() < 0 or truths.max() >= N_CLASSES or \
                preds.min() < 0 or preds.max() >= N_CLASSES:
            raise BadLabel(f"labels must be in 0..{N_CLASSES - 1}")
        np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def binary_metrics(cm: ConfusionMatrix, class_k: int) -> ClassMetrics:
    """One-vs-rest metrics for class k: precision TP/(TP+FP), recall
    TP/(TP+FN), F1 their harmonic mean; 0/0 quotients are 0."""
    if not 0 <= class_k < N_CLASSES:
        raise BadLabel(f"class must be in 0..{N_CLASSES - 1}")
    c = cm.counts
    tp = int(c[class_k, class_k])
    fp = int(c[:, class_k].sum() - tp)
    fn = int(c[class_k, :].sum() - tp)
    tn = int(c.sum() - tp - fp - fn)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    return ClassMetrics(precision, recall, f1, tp, fp, fn, tn)


def aggregate(cm: ConfusionMatrix) -> MetricsReport:
    """Full report: accuracy, per-class metrics, macro and weighted means."""
    total = cm.total
    if total == 0:
        raise EmptyMatrix("no evaluated instances")
    per_class = tuple(binary_metrics(cm, k) for k in range(N_CLASSES))
    accuracy = float(np.trace(cm.counts) / total)
    macro = tuple(
        float(np.mean([getattr(m, name) for m in per_class]))
        for name in ("precision", "recall", "f1"))
    support = cm.counts.sum(axis=1) / total
    weighted = tuple(
        float(sum(s * getattr(m, name) for s, m in zip(support, per_class)))
        for name in ("precision", "recall", "f1"))
    return MetricsReport(accuracy, per_class, macro, weighted, cm)


def report_from_predictions(truths: Sequence[int], preds: Sequence[int]) -> MetricsReport:
    return aggregate(confusion(truths, preds))


def majority_vote(event_ids: Sequence[str], preds: Sequence[int]) -> dict[str, int]:
    """Per-event label by majority over its instances, ties toward the
    lowest class index (matching the classifier's own tie rule)."""
    if len(event_ids) != len(preds):
        raise LengthMismatch(f"{len(event_ids)} ids vs {len(preds)} predictions")
    votes: dict[str, np.ndarray] = {}
    for event_id, p in zip(event_ids, preds):
        votes.setdefault(event_id, np.zeros(N_CLASSES, dtype=int))[int(p)] += 1
    return {event_id: int(np.argmax(v)) for event_id, v in votes.items()}


def event_level_report(event_ids: Sequence[str], truths: Sequence[int],
                       preds: Sequence[int]) -> MetricsReport:
    """Metrics after collapsing instances to one majority-vote prediction
    per event. Offered as an extra view; the primary evaluation stays
    per-instance."""
    voted = majority_vote(event_ids, preds)
    truth_by_event: dict[str, int] = {}
    for event_id, t in zip(event_ids, truths):
        truth_by_event.setdefault(event_id, int(t))
    ids = sorted(voted)
    return report_from_predictions([truth_by_event[i] for i in ids],
                                   [voted[i] for i in ids])


def write_metrics_json(report: MetricsReport, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Comparison experiments

EXPERIMENT_HEADER = ["feature", "weeks", "fps", "acc", "pre", "rec", "f1"]


@dataclass(frozen=True)
class ExperimentRow:
    """One grid cell: a feature kind at a dataset size and sampling rate,
    with weighted metrics from a tuned classifier (empty on failure)."""

    feature: str
    weeks: int
    fps: int
    acc: float | None = None
    pre: float | None = None
    rec: float | None = None
    f1: float | None = None
    error: str | None = None


def run_experiment(
    features: Sequence[str],
    weeks: Sequence[int],
    fps_values: Sequence[int],
    config,
) -> list[ExperimentRow]:
    """Tune and evaluate one classifier per (feature, weeks, fps) cell.

    ``weeks`` scales the event inventory relative to ``config.base_weeks``
    (a 2x-weeks cell has 2x the events per class). Cell failures land in
    the row's error field; the grid keeps running.
    """
    from . import pipeline  # deferred: pipeline builds on this module

    rows = []
    for feature in features:
        for wk in weeks:
            for fps in fps_values:
                try:
                    result = pipeline.run_cell(config, feature=feature, weeks=int(wk),
                                               fps=int(fps))
                    m = result.metrics
                    rows.append(ExperimentRow(
                        feature=feature, weeks=int(wk), fps=int(fps),
                        acc=m.accuracy, pre=m.weighted[0], rec=m.weighted[1],
                        f1=m.weighted[2]))
                except Exception as exc:
                    rows.append(ExperimentRow(feature=feature, weeks=int(wk),
                                              fps=int(fps), error=str(exc)))
    return rows


def _cell(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_experiment_csv(rows: Sequence[ExperimentRow], path: str | Path,
                         include_error: bool = False) -> None:
    header = EXPERIMENT_HEADER + (["error"] if include_error else [])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            row = [r.feature, r.weeks, r.fps, _cell(r.acc), _cell(r.pre),
                   _cell(r.rec), _cell(r.f1)]
            if include_error:
                row.append(r.error or "")
            writer.writerow(row)


def write_experiment_long_csv(rows: Sequence[ExperimentRow], path: str | Path) -> None:
    """Plot-ready long format: one (cell, metric) pair per row."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "weeks", "fps", "metric", "value"])
        for r in rows:
            for metric, value in (("acc", r.acc), ("pre", r.pre),
                                  ("rec", r.rec), ("f1", r.f1)):
                if value is not None:
                    writer.writerow([r.feature, r.weeks, r.fps, metric, repr(float(value))])
