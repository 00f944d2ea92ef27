"""Phone -> cloud -> human cascade evaluation.

The cloud stage only ever sees the images its phone candidate abstained on
(conditioning). Images the cloud abstains on go to a human reviewer, who is
taken to be always right. Combined candidates feed two summaries: a grid of
combined MCC by (phone abstention, conditioned cloud abstention), and
false-alarm curves comparing phone-only, cloud-only and combined deployments
over matched image sets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from ._csvio import render
from .dataset import CLOUD, PHONE, Dataset
from .metrics import ABSTAIN_CODE, ConfusionMatrix, confusion_from_codes, mcc
from .sweep import Candidate, Grid, group_best_by_abstention, parallel_map, sweep_stage

ROUTE_PHONE, ROUTE_CLOUD, ROUTE_HUMAN = 0, 1, 2

FAMILIES = ("phone-only", "cloud-only", "combined")


class ConditioningError(ValueError):
    """A cloud candidate was not evaluated on its phone candidate's abstained set."""


class EmptyConditioningWarning(UserWarning):
    """The phone candidate abstained on no image, so there is nothing to condition on."""


class EmptyCurveWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class CombinedResult:
    phone: Candidate
    cloud: Optional[Candidate]
    predicted: np.ndarray
    route: np.ndarray
    confusion: ConfusionMatrix
    mcc: float

    @property
    def phone_abstention(self) -> Fraction:
        return self.phone.abstention

    @property
    def cloud_abstention(self) -> Fraction:
        """Fraction of the phone-abstained subset the cloud also abstained on (0 if empty)."""
        if self.cloud is None:
            return Fraction(0)
        return self.cloud.abstention

    @property
    def n_phone_accepted(self) -> int:
        return int(np.count_nonzero(self.route == ROUTE_PHONE))

    @property
    def n_cloud_accepted(self) -> int:
        return int(np.count_nonzero(self.route == ROUTE_CLOUD))

    @property
    def n_human(self) -> int:
        return int(np.count_nonzero(self.route == ROUTE_HUMAN))

    @property
    def n_correct(self) -> int:
        return self.confusion.correct

    def false_alarm_fraction(self, include_human: bool = True) -> Optional[float]:
        """False alarms over all images, or over model-answered images only.

        Returns None when the chosen evaluation set is empty.
        """
        if include_human:
            m = self.confusion
        else:
            truth = self.phone.truth
            keep = np.where(self.route == ROUTE_HUMAN, ABSTAIN_CODE, self.predicted).astype(np.int8)
            m = confusion_from_codes(truth, keep)
        return m.false_alarms / m.total if m.total else None


@dataclass(frozen=True)
class CascadeCell:
    x: float
    y: float
    value: float
    phone_abstention: Fraction
    cloud_abstention: Fraction
    phone_window: Optional[tuple[float, float]] = None
    cloud_window: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class CurvePoint:
    abstention_fraction: float
    fa_raw: float
    fa_smoothed: float


@dataclass(frozen=True)
class ComparisonCurve:
    family: str
    points: tuple[CurvePoint, ...]
    smooth_width: float

    @property
    def empty(self) -> bool:
        return not self.points


def _check_full(dataset: Dataset, phone: Candidate) -> None:
    if len(phone.rows) != len(dataset):
        raise ValueError("phone candidate must be evaluated on the full dataset")


def conditioned_cloud_candidates(
    dataset: Dataset,
    phone: Candidate,
    grid: Grid,
    stage: str = CLOUD,
    workers: int = 1,
) -> list[Candidate]:
    """Sweep the cloud stage over exactly the images ``phone`` abstained on.

    Emits :class:`EmptyConditioningWarning` and returns ``[]`` when the phone
    candidate abstained on nothing.
    """
    _check_full(dataset, phone)
    dataset.require_stage(stage)
    subset = phone.abstained_rows
    if not subset.size:
        warnings.warn(
            f"phone window {phone.window} abstains on no image; no cloud candidates",
            EmptyConditioningWarning,
            stacklevel=2,
        )
        return []
    return sweep_stage(dataset, stage, grid, rows=subset, workers=workers)


def combined_evaluate(dataset: Dataset, phone: Candidate, cloud: Optional[Candidate]) -> CombinedResult:
    """Route every image: phone if it accepts, else cloud if it accepts, else human (= truth)."""
    _check_full(dataset, phone)
    subset = phone.abstained_rows
    if cloud is None:
        if subset.size:
            raise ConditioningError("phone abstains on some images but no cloud candidate was given")
    elif not np.array_equal(cloud.rows, subset):
        raise ConditioningError(
            f"cloud candidate {cloud.window} was not conditioned on phone candidate {phone.window}"
        )
    truth = dataset.truth_alerts
    predicted = truth.copy()
    route = np.full(len(dataset), ROUTE_HUMAN, dtype=np.int8)
    ok = phone.predicted != ABSTAIN_CODE
    predicted[phone.rows[ok]] = phone.predicted[ok]
    route[phone.rows[ok]] = ROUTE_PHONE
    if cloud is not None:
        ok = cloud.predicted != ABSTAIN_CODE
        predicted[cloud.rows[ok]] = cloud.predicted[ok]
        route[cloud.rows[ok]] = ROUTE_CLOUD
    m = confusion_from_codes(truth, predicted)
    return CombinedResult(phone, cloud, predicted, route, m, mcc(m))


def combined_model_set(
    dataset: Dataset,
    phone_grid: Grid,
    cloud_grid: Grid,
    workers: int = 1,
    phone_stage: str = PHONE,
    cloud_stage: str = CLOUD,
) -> list[CombinedResult]:
    """Best phone candidate per abstention fraction, each paired with the best
    conditioned cloud candidate per conditioned fraction.

    Ordered by (phone fraction, cloud fraction).
    """
    if not len(phone_grid) or not len(cloud_grid):
        raise ValueError("grids must not be empty")
    dataset.require_stage(cloud_stage)
    phones = group_best_by_abstention(sweep_stage(dataset, phone_stage, phone_grid, workers=workers))

    def expand(phone: Candidate) -> list[CombinedResult]:
        if not phone.abstained_rows.size:
            return [combined_evaluate(dataset, phone, None)]
        clouds = sweep_stage(dataset, cloud_stage, cloud_grid, rows=phone.abstained_rows)
        return [combined_evaluate(dataset, phone, c) for c in group_best_by_abstention(clouds).values()]

    nested = parallel_map(expand, list(phones.values()), workers)
    return [r for group in nested for r in group]


def bucket_of(x: float, bucket: float) -> float:
    return round(math.floor(x / bucket + 0.5) * bucket, 10)


def _cell(r: CombinedResult, bucket: float) -> CascadeCell:
    def key(c: Optional[Candidate]):
        return None if c is None or c.window is None else (c.window.lower, c.window.upper)

    return CascadeCell(
        bucket_of(float(r.phone_abstention), bucket),
        bucket_of(float(r.cloud_abstention), bucket),
        r.mcc,
        r.phone_abstention,
        r.cloud_abstention,
        key(r.phone),
        key(r.cloud),
    )


def dedupe_cells(cells: Sequence[CascadeCell]) -> list[CascadeCell]:
    """One cell per (x, y) bucket, highest MCC first-come; sorted by (x, y)."""
    best: dict[tuple[float, float], CascadeCell] = {}
    for c in cells:
        cur = best.get((c.x, c.y))
        if cur is None or c.value > cur.value:
            best[(c.x, c.y)] = c
    return [best[k] for k in sorted(best)]


def combined_grid(
    dataset: Dataset,
    phone_grid: Grid,
    cloud_grid: Grid,
    bucket: float = 0.05,
    workers: int = 1,
    phone_stage: str = PHONE,
    cloud_stage: str = CLOUD,
) -> list[CascadeCell]:
    """Combined MCC per (phone abstention, conditioned cloud abstention) bucket.

    A phone candidate that never abstains sends nothing to the cloud; its
    cell sits at cloud abstention 0.
    """
    if not bucket > 0:
        raise ValueError("bucket must be positive")
    results = combined_model_set(dataset, phone_grid, cloud_grid, workers, phone_stage, cloud_stage)
    return dedupe_cells([_cell(r, bucket) for r in results])


def smooth_median(xs: Sequence[float], ys: Sequence[float], width: float) -> list[float]:
    """Centered sliding-window median: each point takes the median of all
    points within ``width / 2`` of its abscissa."""
    if not width > 0:
        raise ValueError("smoothing width must be positive")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    half = width / 2 + 1e-12
    lo = np.searchsorted(x, x - half, side="left")
    hi = np.searchsorted(x, x + half, side="right")
    return [float(np.median(y[a:b])) for a, b in zip(lo, hi)]


def _curve(family: str, raw: list[tuple[float, float]], width: float) -> ComparisonCurve:
    raw = sorted(raw)
    if not raw:
        warnings.warn(f"{family} curve has no points", EmptyCurveWarning, stacklevel=3)
        return ComparisonCurve(family, (), width)
    xs, ys = zip(*raw)
    smoothed = smooth_median(xs, ys, width)
    return ComparisonCurve(
        family, tuple(CurvePoint(x, y, s) for x, y, s in zip(xs, ys, smoothed)), width
    )


def comparison_curves(
    dataset: Dataset,
    phone_grid: Grid,
    cloud_grid: Grid,
    smooth_width: float = 0.05,
    include_human: bool = True,
    workers: int = 1,
    phone_stage: str = PHONE,
    cloud_stage: str = CLOUD,
) -> list[ComparisonCurve]:
    """False-alarm fraction against phone abstention fraction for three deployments.

    * phone-only: the selected phone candidate, FA over the images it answers.
    * cloud-only: an unconditioned cloud candidate whose answered image set is
      identical to the phone candidate's; lowest FA wins among matches.
    * combined: every combined candidate built on that phone candidate. With
      ``include_human`` the human-filled images stay in the FA denominator;
      otherwise only model-answered images are counted.
    """
    if not smooth_width > 0:
        raise ValueError("smooth_width must be positive")
    results = combined_model_set(dataset, phone_grid, cloud_grid, workers, phone_stage, cloud_stage)
    cloud_all = sweep_stage(dataset, cloud_stage, cloud_grid, workers=workers)
    by_inclusion: dict[bytes, list[Candidate]] = {}
    for c in cloud_all:
        by_inclusion.setdefault(c.included_rows.tobytes(), []).append(c)

    phone_raw, cloud_raw, combined_raw = [], [], []
    seen_phone = set()
    for r in results:
        p = r.phone
        x = float(p.abstention)
        if id(p) not in seen_phone:
            seen_phone.add(id(p))
            if p.report.n_evaluated:
                phone_raw.append((x, p.report.false_alarm_fraction))
                matches = by_inclusion.get(p.included_rows.tobytes(), [])
                if matches:
                    best = min(matches, key=lambda c: (c.report.false_alarm_fraction, c.window_key()))
                    cloud_raw.append((x, best.report.false_alarm_fraction))
        fa = r.false_alarm_fraction(include_human)
        if fa is not None:
            combined_raw.append((x, fa))

    return [
        _curve("phone-only", phone_raw, smooth_width),
        _curve("cloud-only", cloud_raw, smooth_width),
        _curve("combined", combined_raw, smooth_width),
    ]


GRID_HEADER = (
    "phone_abstention",
    "cloud_abstention",
    "mcc",
    "phone_abstention_exact",
    "cloud_abstention_exact",
    "phone_lower",
    "phone_upper",
    "cloud_lower",
    "cloud_upper",
)


def export_grid(cells: Sequence[CascadeCell], layout: str = "long", comments: Sequence[str] = ()) -> str:
    """Render grid cells as long-format rows or as a cloud-by-phone matrix."""
    cells = dedupe_cells(cells)
    if layout == "long":
        rows = []
        for c in cells:
            pw = c.phone_window or (None, None)
            cw = c.cloud_window or (None, None)
            rows.append(
                (c.x, c.y, c.value, str(c.phone_abstention), str(c.cloud_abstention), *pw, *cw)
            )
        return render(GRID_HEADER, rows, comments)
    if layout == "matrix":
        xs = sorted({c.x for c in cells})
        ys = sorted({c.y for c in cells})
        values = {(c.x, c.y): c.value for c in cells}
        header = ["cloud\\phone"] + [format(x, ".10g") for x in xs]
        return render(header, ([y] + [values.get((x, y)) for x in xs] for y in ys), comments)
    raise ValueError(f"unknown grid layout {layout!r}")


CURVE_HEADER = ("family", "abstention_fraction", "fa_raw", "fa_smoothed")


def export_curves(curves: Sequence[ComparisonCurve], comments: Sequence[str] = ()) -> str:
    rows = (
        (c.family, p.abstention_fraction, p.fa_raw, p.fa_smoothed) for c in curves for p in c.points
    )
    return render(CURVE_HEADER, rows, comments)
