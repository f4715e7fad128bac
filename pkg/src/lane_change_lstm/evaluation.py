"""Confusion counts, accuracy/precision/recall and their report rendering."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import InputError, LengthMismatch

# Create logger for this module
logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
UNDEFINED_TEXT = "n/a"
METRIC_NAMES = ("accuracy", "precision", "recall")

# Undefined metrics are represented as None
Undefined = None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class MetricsReport:
    """Fractions in [0, 1]; None where the denominator is zero."""

    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    counts: ConfusionCounts

    def metric(self, name: str) -> Optional[float]:
        if name not in METRIC_NAMES:
            raise InputError(f"Unknown metric {name!r}; expected one of {METRIC_NAMES}")
        return getattr(self, name)


def confusion(
    probabilities: Sequence[float],
    labels: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
) -> ConfusionCounts:
    """Tally predictions; probability >= threshold predicts a lane change."""
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.shape[0] != y.shape[0]:
        raise LengthMismatch(p.shape[0], y.shape[0])
    if not np.all((y == 0) | (y == 1)):
        raise InputError("Labels must be 0 or 1")
    predicted = p >= threshold
    actual = y == 1
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    if denominator == 0:
        return Undefined
    return numerator / denominator


def metrics(counts: ConfusionCounts) -> MetricsReport:
    return MetricsReport(
        accuracy=_ratio(counts.tp + counts.tn, counts.total),
        precision=_ratio(counts.tp, counts.tp + counts.fp),
        recall=_ratio(counts.tp, counts.tp + counts.fn),
        counts=counts,
    )


def evaluate_probabilities(
    probabilities: Sequence[float], labels: Sequence[int], threshold: float = DEFAULT_THRESHOLD
) -> MetricsReport:
    report = metrics(confusion(probabilities, labels, threshold))
    logger.info(f"Evaluated {report.counts.total} windows: {format_report(report)}")
    return report


def format_percent(value: Optional[float]) -> str:
    """Two-decimal percent, or n/a when undefined."""
    if value is None:
        return UNDEFINED_TEXT
    return f"{100.0 * value:.2f}"


def format_report(report: MetricsReport) -> str:
    """Row in 'accuracy / precision / recall' percent form, e.g. '59.15 / 78.54 / 28.43'."""
    return " / ".join(format_percent(report.metric(name)) for name in METRIC_NAMES)


def report_row(report: MetricsReport, **extra: Union[str, int, float]) -> Dict[str, Union[str, int, float]]:
    row: Dict[str, Union[str, int, float]] = dict(extra)
    for name in METRIC_NAMES:
        row[name] = format_percent(report.metric(name))
    row.update(report.counts.to_dict())
    return row


def write_report_csv(
    rows: Iterable[Dict[str, Union[str, int, float]]], path: Union[str, Path]
) -> Path:
    """Write report rows; metric cells are percent strings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows))
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def mean_metric(reports: List[MetricsReport], name: str) -> Optional[float]:
    """Mean over reports where the metric is defined."""
    values = [r.metric(name) for r in reports if r.metric(name) is not None]
    if not values:
        return Undefined
    return float(np.mean(values))
