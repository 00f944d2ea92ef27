"""Threshold-window sweeps for one stage and per-fraction candidate selection."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np

from ._csvio import render
from .alerts import AlertLevel, alerts_of_counts
from .dataset import Dataset
from .metrics import ABSTAIN_CODE, REPORT_FIELDS, MetricReport, report_from_codes
from .window import Decision, Window

HEATMAP_METRICS = ("mcc", "abstention_fraction", "false_alarm_fraction", "accuracy")

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Order-preserving map; results never depend on ``workers``."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Grid:
    step: float
    min_threshold: float
    max_threshold: float
    thresholds: tuple[float, ...]

    @property
    def index_pairs(self) -> list[tuple[int, int]]:
        n = len(self.thresholds)
        return [(i, j) for i in range(n) for j in range(i, n)]

    @property
    def windows(self) -> list[Window]:
        t = self.thresholds
        return [Window(t[i], t[j]) for i, j in self.index_pairs]

    def __len__(self) -> int:
        n = len(self.thresholds)
        return n * (n + 1) // 2


def make_grid(step: float = 0.05, min_threshold: float = 0.0, max_threshold: float = 0.95) -> Grid:
    """Thresholds ``min, min+step, ... <= max`` and every window with lower <= upper."""
    if not step > 0:
        raise ValueError("step must be positive")
    if not 0.0 <= min_threshold <= max_threshold < 1.0:
        raise ValueError("grid bounds must satisfy 0 <= min <= max < 1")
    n = int(math.floor((max_threshold - min_threshold) / step + 1e-9)) + 1
    thresholds = tuple(round(min_threshold + k * step, 10) for k in range(n))
    return Grid(step, min_threshold, max_threshold, thresholds)


@dataclass(frozen=True, eq=False)
class Candidate:
    """A stage evaluated at one window over a fixed evaluation set.

    ``rows`` are dataset row indices of the evaluation set (dataset order);
    ``predicted`` holds alert codes with -1 marking abstentions.
    """

    stage: str
    window: Optional[Window]
    image_ids: tuple[str, ...]
    rows: np.ndarray
    truth: np.ndarray
    predicted: np.ndarray
    report: MetricReport

    def __eq__(self, other):
        if not isinstance(other, Candidate):
            return NotImplemented
        return (
            self.stage == other.stage
            and self.window == other.window
            and self.image_ids == other.image_ids
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.truth, other.truth)
            and np.array_equal(self.predicted, other.predicted)
            and self.report == other.report
        )

    __hash__ = None

    @property
    def decisions(self) -> list[Decision]:
        return [Decision(None if p == ABSTAIN_CODE else AlertLevel(int(p))) for p in self.predicted]

    @property
    def abstention(self) -> Fraction:
        return self.report.abstention

    @property
    def abstained_rows(self) -> np.ndarray:
        return self.rows[self.predicted == ABSTAIN_CODE]

    @property
    def included_rows(self) -> np.ndarray:
        return self.rows[self.predicted != ABSTAIN_CODE]

    def window_key(self) -> tuple[float, float]:
        if self.window is None:
            return (math.inf, math.inf)
        return (self.window.lower, self.window.upper)


def _subset(dataset: Dataset, rows: Optional[np.ndarray]):
    if rows is None:
        return np.arange(len(dataset), dtype=np.int64), dataset.image_ids
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (np.any(np.diff(rows) <= 0) or rows[0] < 0 or rows[-1] >= len(dataset)):
        raise ValueError("rows must be strictly increasing dataset indices")
    ids = dataset.image_ids
    return rows, tuple(ids[i] for i in rows)


def make_candidate(
    stage: str,
    window: Optional[Window],
    image_ids: tuple[str, ...],
    rows: np.ndarray,
    truth: np.ndarray,
    predicted: np.ndarray,
) -> Candidate:
    return Candidate(stage, window, image_ids, rows, truth, predicted, report_from_codes(truth, predicted))


def counts_above(dataset: Dataset, stage: str, threshold: float) -> np.ndarray:
    """Per-record number of ``stage`` boxes with confidence strictly above ``threshold``."""
    owner, conf = dataset.flat_confidences(stage)
    return np.bincount(owner[conf > threshold], minlength=len(dataset))


def alert_table(dataset: Dataset, stage: str, thresholds: Sequence[float]) -> np.ndarray:
    """Alert codes of the counts above each threshold, shape (records, thresholds)."""
    cache = dataset.__dict__.setdefault("_alert_tables", {})
    key = (stage, tuple(thresholds))
    if key not in cache:
        cols = [alerts_of_counts(counts_above(dataset, stage, t)) for t in thresholds]
        table = np.stack(cols, axis=1) if cols else np.zeros((len(dataset), 0), np.int8)
        table.setflags(write=False)
        cache[key] = table
    return cache[key]


def _windowed(low: np.ndarray, high: np.ndarray) -> np.ndarray:
    return np.where(low == high, low, np.int8(ABSTAIN_CODE)).astype(np.int8)


def evaluate_window(
    dataset: Dataset, stage: str, window: Window, rows: Optional[np.ndarray] = None
) -> Candidate:
    """Candidate for an arbitrary window, optionally restricted to ``rows``."""
    rows, ids = _subset(dataset, rows)
    low = alerts_of_counts(counts_above(dataset, stage, window.lower))[rows]
    high = alerts_of_counts(counts_above(dataset, stage, window.upper))[rows]
    truth = dataset.truth_alerts[rows]
    return make_candidate(stage, window, ids, rows, truth, _windowed(low, high))


def abstain_all(dataset: Dataset, stage: str, rows: Optional[np.ndarray] = None) -> Candidate:
    """A stage that defers every image in the evaluation set."""
    rows, ids = _subset(dataset, rows)
    predicted = np.full(len(rows), ABSTAIN_CODE, dtype=np.int8)
    return make_candidate(stage, None, ids, rows, dataset.truth_alerts[rows], predicted)


def sweep_stage(
    dataset: Dataset,
    stage: str,
    grid: Grid,
    rows: Optional[np.ndarray] = None,
    workers: int = 1,
) -> list[Candidate]:
    """One candidate per grid window, in lexicographic (lower, upper) order."""
    if not len(dataset):
        raise ValueError("cannot sweep an empty dataset")
    dataset.require_stage(stage)
    table = alert_table(dataset, stage, grid.thresholds)
    rows, ids = _subset(dataset, rows)
    sub = table[rows]
    truth = dataset.truth_alerts[rows]
    t = grid.thresholds

    def run(pair):
        i, j = pair
        return make_candidate(stage, Window(t[i], t[j]), ids, rows, truth, _windowed(sub[:, i], sub[:, j]))

    return parallel_map(run, grid.index_pairs, workers)


def group_best_by_abstention(candidates: Iterable[Candidate]) -> dict[Fraction, Candidate]:
    """Highest-MCC candidate per exact abstention fraction.

    Ties go to the lexicographically smallest (lower, upper). Keys are sorted.
    """
    best: dict[Fraction, Candidate] = {}
    for c in candidates:
        key = c.abstention
        cur = best.get(key)
        if cur is None or (-c.report.mcc, c.window_key()) < (-cur.report.mcc, cur.window_key()):
            best[key] = c
    return dict(sorted(best.items()))


def _metric_value(c: Candidate, metric: str) -> float:
    return getattr(c.report, metric)


def export_heatmap(candidates: Sequence[Candidate], metric: str, comments: Sequence[str] = ()) -> str:
    """CSV matrix: rows are lower thresholds, columns upper thresholds.

    Cells with lower > upper (or no candidate) are left empty.
    """
    if metric not in HEATMAP_METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {HEATMAP_METRICS}")
    cells = {}
    for c in candidates:
        if c.window is not None:
            cells[(c.window.lower, c.window.upper)] = _metric_value(c, metric)
    levels = sorted({x for key in cells for x in key})
    header = [f"lower\\upper({metric})"] + [format(v, ".10g") for v in levels]
    rows = [[lo] + [cells.get((lo, hi)) for hi in levels] for lo in levels]
    return render(header, rows, comments)


CANDIDATE_HEADER = ("stage", "window_lower", "window_upper") + REPORT_FIELDS


def candidate_row(c: Candidate) -> tuple:
    lo, hi = (None, None) if c.window is None else (c.window.lower, c.window.upper)
    return (c.stage, lo, hi) + c.report.row()


def export_candidates(candidates: Sequence[Candidate], comments: Sequence[str] = ()) -> str:
    return render(CANDIDATE_HEADER, (candidate_row(c) for c in candidates), comments)
