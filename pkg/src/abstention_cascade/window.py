"""Box-confidence windowing: the accept/abstain rule for one detection stage.

A window ``(lower, upper)`` counts the boxes whose confidence is strictly
greater than each bound, giving ``l`` and ``u``. The stage accepts when both
counts map to the same alert and abstains otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from ._csvio import render
from .alerts import AlertLevel, alert_of_count
from .dataset import Dataset


@dataclass(frozen=True, order=True)
class Window:
    lower: float
    upper: float

    def __post_init__(self):
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"window {name} must lie in [0, 1), got {v}")
        if self.lower > self.upper:
            raise ValueError(f"window lower {self.lower} exceeds upper {self.upper}")

    def widens(self, other: "Window") -> bool:
        """True when this window contains ``other`` (lower <= other.lower, upper >= other.upper)."""
        return self.lower <= other.lower and self.upper >= other.upper


@dataclass(frozen=True)
class Partition:
    l: int
    u: int


@dataclass(frozen=True)
class Decision:
    """Accepted alert, or ``alert=None`` for an abstention."""

    alert: Optional[AlertLevel]

    @classmethod
    def accept(cls, alert: AlertLevel) -> "Decision":
        return cls(AlertLevel(alert))

    @classmethod
    def abstain(cls) -> "Decision":
        return cls(None)

    @property
    def abstained(self) -> bool:
        return self.alert is None

    def __str__(self) -> str:
        return "abstain" if self.alert is None else self.alert.label


ABSTAIN = Decision.abstain()


def partition(confidences: Iterable[float], window: Window) -> Partition:
    l = u = 0
    for c in confidences:
        if c > window.lower:
            l += 1
            if c > window.upper:
                u += 1
    return Partition(l, u)


def decide_partition(p: Partition) -> Decision:
    low, high = alert_of_count(p.l), alert_of_count(p.u)
    return Decision.accept(low) if low == high else ABSTAIN


def decide(confidences: Iterable[float], window: Window) -> Decision:
    return decide_partition(partition(confidences, window))


def predict_stage(dataset: Dataset, stage: str, window: Window) -> list[tuple[str, Decision]]:
    """One decision per record, in dataset order."""
    dataset.require_stage(stage)
    return [(r.image_id, decide(r.confidences(stage), window)) for r in dataset.records]


def diagnose_stage(
    dataset: Dataset, stage: str, window: Window
) -> list[tuple[str, Partition, Decision]]:
    dataset.require_stage(stage)
    rows = []
    for r in dataset.records:
        p = partition(r.confidences(stage), window)
        rows.append((r.image_id, p, decide_partition(p)))
    return rows


def diagnostics_csv(rows: Sequence[tuple[str, Partition, Decision]], comments=()) -> str:
    return render(
        ("image_id", "l", "u", "decision"),
        ((image_id, p.l, p.u, str(d)) for image_id, p, d in rows),
        comments,
    )
