"""Confusion matrices over alert levels and the metrics derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .alerts import AlertLevel

N_CLASSES = len(AlertLevel)
ABSTAIN_CODE = -1

REPORT_FIELDS = (
    "mcc",
    "accuracy",
    "abstention_fraction",
    "false_alarm_fraction",
    "n_evaluated",
    "n_abstained",
)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """3x3 counts; rows are truth alerts, columns predicted alerts."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"confusion matrix must be {N_CLASSES}x{N_CLASSES}")
        if (cells < 0).any():
            raise ValueError("confusion cells must be non-negative")
        object.__setattr__(self, "cells", cells)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.cells, other.cells)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.cells + other.cells)

    @property
    def total(self) -> int:
        return int(self.cells.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.cells))

    @property
    def false_alarms(self) -> int:
        spray = int(AlertLevel.SPRAY)
        return int(self.cells[:, spray].sum() - self.cells[spray, spray])

    @classmethod
    def zeros(cls) -> "ConfusionMatrix":
        return cls(np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))


def confusion(pairs: Iterable[tuple[AlertLevel, AlertLevel]]) -> ConfusionMatrix:
    cells = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for truth, pred in pairs:
        cells[int(truth), int(pred)] += 1
    return ConfusionMatrix(cells)


def confusion_from_codes(truth: np.ndarray, predicted: np.ndarray) -> ConfusionMatrix:
    """Confusion over the non-abstained entries of integer code arrays (-1 = abstain)."""
    keep = predicted >= 0
    idx = truth[keep].astype(np.int64) * N_CLASSES + predicted[keep]
    cells = np.bincount(idx, minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)
    return ConfusionMatrix(cells)


def mcc(m: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation; 0 when a marginal is degenerate."""
    s = m.total
    if s == 0:
        raise ValueError("MCC of an empty confusion matrix is undefined")
    cells = [[int(x) for x in row] for row in m.cells]
    c = sum(cells[k][k] for k in range(N_CLASSES))
    t = [sum(row) for row in cells]
    p = [sum(cells[r][k] for r in range(N_CLASSES)) for k in range(N_CLASSES)]
    num = c * s - sum(tk * pk for tk, pk in zip(t, p))
    den_sq = (s * s - sum(pk * pk for pk in p)) * (s * s - sum(tk * tk for tk in t))
    if den_sq == 0:
        return 0.0
    root = math.isqrt(den_sq)
    den = float(root) if root * root == den_sq else math.sqrt(den_sq)
    return max(-1.0, min(1.0, num / den))


def accuracy(m: ConfusionMatrix) -> float:
    s = m.total
    return m.correct / s if s else 0.0


def abstention_fraction(decisions: Sequence) -> float:
    """Share of decisions that abstain; accepts Decision objects or -1/alert codes."""
    if not len(decisions):
        raise ValueError("abstention fraction of an empty decision list is undefined")
    n = sum(1 for d in decisions if _is_abstain(d))
    return n / len(decisions)


def _is_abstain(d) -> bool:
    if hasattr(d, "abstained"):
        return d.abstained
    return d is None or int(d) == ABSTAIN_CODE


def false_alarm_fraction(pairs: Sequence[tuple[AlertLevel, AlertLevel]]) -> float:
    """Share of (truth, pred) pairs that recommend spray when the truth is not spray."""
    if not len(pairs):
        raise ValueError("false-alarm fraction of an empty pair list is undefined")
    spray = AlertLevel.SPRAY
    return sum(1 for t, p in pairs if p == spray and t != spray) / len(pairs)


@dataclass(frozen=True)
class MetricReport:
    mcc: float
    accuracy: float
    abstention_fraction: float
    false_alarm_fraction: float
    n_evaluated: int
    n_abstained: int

    @property
    def n_total(self) -> int:
        return self.n_evaluated + self.n_abstained

    @property
    def abstention(self) -> Fraction:
        """Exact abstention fraction, used as a grouping key."""
        return Fraction(self.n_abstained, self.n_total)

    def row(self) -> tuple:
        return tuple(getattr(self, f) for f in REPORT_FIELDS)


def report_from_matrix(m: ConfusionMatrix, n_abstained: int) -> MetricReport:
    n_eval = m.total
    n = n_eval + n_abstained
    if n == 0:
        raise ValueError("cannot report on an empty evaluation set")
    if n_eval == 0:
        # Empty accepted set: MCC reported as 0 and flagged through n_evaluated = 0.
        return MetricReport(0.0, 0.0, 1.0, 0.0, 0, n_abstained)
    return MetricReport(
        mcc=mcc(m),
        accuracy=accuracy(m),
        abstention_fraction=n_abstained / n,
        false_alarm_fraction=m.false_alarms / n_eval,
        n_evaluated=n_eval,
        n_abstained=n_abstained,
    )


def report_from_codes(truth: np.ndarray, predicted: np.ndarray) -> MetricReport:
    m = confusion_from_codes(truth, predicted)
    return report_from_matrix(m, int(len(predicted) - m.total))
