"""Alert levels and the count-to-alert rule."""

from __future__ import annotations

from enum import IntEnum

import numpy as np

# Smallest pest count that maps to each level above NoAction.
CAUTIOUS_MIN_COUNT = 1
SPRAY_MIN_COUNT = 8


class AlertLevel(IntEnum):
    NO_ACTION = 0
    CAUTIOUS = 1
    SPRAY = 2

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    AlertLevel.NO_ACTION: "no_action",
    AlertLevel.CAUTIOUS: "cautious",
    AlertLevel.SPRAY: "spray",
}


def alert_of_count(count: int) -> AlertLevel:
    """Map a pest count to its alert: 0 -> NoAction, 1..7 -> Cautious, 8+ -> Spray."""
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if count >= SPRAY_MIN_COUNT:
        return AlertLevel.SPRAY
    if count >= CAUTIOUS_MIN_COUNT:
        return AlertLevel.CAUTIOUS
    return AlertLevel.NO_ACTION


def alerts_of_counts(counts):
    """Vectorised ``alert_of_count`` over an integer numpy array (returns int8 codes)."""
    counts = np.asarray(counts)
    if counts.size and counts.min() < 0:
        raise ValueError("counts must be non-negative")
    return (
        (counts >= CAUTIOUS_MIN_COUNT).astype(np.int8)
        + (counts >= SPRAY_MIN_COUNT).astype(np.int8)
    )
