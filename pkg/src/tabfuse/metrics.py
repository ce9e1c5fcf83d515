"""Hard evaluation metrics: one-vs-rest precision/recall/F1 and macro means."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

from .errors import IoFailure, LengthMismatch


@dataclass
class MetricsRow:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    vacuous: bool = False  # class absent from both gold and predictions


@dataclass
class MetricsTable:
    rows: list[MetricsRow]
    mean: MetricsRow

    def row(self, label: str) -> MetricsRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    @property
    def macro_f1(self) -> float:
        return self.mean.f1


def evaluate_metrics(
    predicted: Sequence[str], gold: Sequence[str], classes: Sequence[str]
) -> MetricsTable:
    """Per-class one-vs-rest counts plus an arithmetic-mean summary row.

    A class that occurs in neither gold nor predictions scores 1.0 across the
    board by convention and is flagged vacuous.
    """
    if len(predicted) != len(gold):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(gold)} gold labels")
    rows: list[MetricsRow] = []
    for cls in classes:
        tp = sum(1 for p, g in zip(predicted, gold) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(predicted, gold) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(predicted, gold) if p != cls and g == cls)
        support = tp + fn
        if tp == 0 and fp == 0 and fn == 0:
            rows.append(MetricsRow(cls, 1.0, 1.0, 1.0, 0, vacuous=True))
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        rows.append(MetricsRow(cls, precision, recall, f1, support))
    n = len(rows)
    mean = MetricsRow(
        label="mean",
        precision=sum(r.precision for r in rows) / n,
        recall=sum(r.recall for r in rows) / n,
        f1=sum(r.f1 for r in rows) / n,
        support=sum(r.support for r in rows),
    )
    return MetricsTable(rows=rows, mean=mean)


def metrics_to_csv(table: MetricsTable) -> str:
    """Rows are classes plus a final mean row; columns precision/recall/f1."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "precision", "recall", "f1"])
    for r in table.rows + [table.mean]:
        writer.writerow([r.label, f"{r.precision:.4f}", f"{r.recall:.4f}", f"{r.f1:.4f}"])
    return buf.getvalue()


def write_metrics_csv(table: MetricsTable, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(metrics_to_csv(table))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
