"""Evaluation reports: metric table, selective curve and per-instance records."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..distributions import Categorical, PredictiveDistribution
from ..graphdata import Task
from . import metrics as M
from .inference import point_prediction, uncertainty
from .selective import DEFAULT_FRACTIONS, selective_curve

CLASSIFICATION_METRICS = ("accuracy", "roc_auc", "nll", "ece", "brier")
REGRESSION_METRICS = ("mae", "nll")


class MetricTaskMismatch(ValueError):
    pass


@dataclass
class EvalReport:
    metrics: dict[str, float]
    curve: list[tuple[float, float]] = field(default_factory=list)
    curve_metric: str = ""
    records: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "metrics": self.metrics,
            "selective": {"metric": self.curve_metric, "curve": [list(p) for p in self.curve]},
            "records": self.records,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fraction", self.curve_metric or "value"])
        for f, v in self.curve:
            w.writerow([repr(f), repr(v)])
        return buf.getvalue()

    def write_curve_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.curve_csv(), encoding="utf-8")

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        sel = obj.get("selective", {})
        return cls(
            metrics=dict(obj["metrics"]),
            curve=[tuple(p) for p in sel.get("curve", [])],
            curve_metric=sel.get("metric", ""),
            records=list(obj.get("records", [])),
        )


def check_metrics(metric_names: Sequence[str], task: Task) -> None:
    allowed = CLASSIFICATION_METRICS if task.is_classification else REGRESSION_METRICS
    bad = [m for m in metric_names if m not in allowed]
    if bad:
        raise MetricTaskMismatch(f"metrics {bad} not available for {task.kind}; choose from {allowed}")
    if "roc_auc" in metric_names and task.num_classes != 2:
        raise MetricTaskMismatch("roc_auc needs a binary classification task")


def evaluate(
    predictions: Sequence[PredictiveDistribution],
    labels: Sequence,
    task: Task,
    metric_names: Sequence[str] | None = None,
    fractions: Sequence[float] | None = DEFAULT_FRACTIONS,
    curve_metric: str | None = None,
) -> EvalReport:
    if metric_names is None:
        metric_names = CLASSIFICATION_METRICS if task.is_classification else REGRESSION_METRICS
        if task.is_classification and task.num_classes != 2:
            metric_names = tuple(m for m in metric_names if m != "roc_auc")
    check_metrics(metric_names, task)
    labels = np.asarray(labels)
    values: dict[str, float] = {}
    for name in metric_names:
        if name == "roc_auc":
            values[name] = M.roc_auc(M.class1_scores(predictions), labels)
        else:
            values[name] = getattr(M, name)(predictions, labels)

    records = []
    for d, y in zip(predictions, labels):
        rec = {"prediction": point_prediction(d), "uncertainty": uncertainty(d)}
        if isinstance(d, Categorical):
            rec.update(label=int(y), probs=d.probs.tolist())
        else:
            rec.update(label=float(y), variance=d.variance)
        records.append(rec)

    curve, cm = [], ""
    if fractions:
        cm = curve_metric or ("accuracy" if task.is_classification else "mae")
        curve = selective_curve(predictions, labels, fractions, cm)
    return EvalReport(values, curve, cm, records)
