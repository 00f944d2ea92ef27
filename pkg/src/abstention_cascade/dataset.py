"""Per-image detection records and the line-delimited dataset format.

Each line of a dataset file is one JSON object::

    {"image_id": "img-001", "truth_count": 3,
     "stages": {"phone": [{"c": 0.91, "k": "pink"}, ...], "cloud": [...]}}

An optional first line ``{"meta": {...}}`` carries free-form metadata such as
the source version string.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .alerts import AlertLevel, alert_of_count

PHONE = "phone"
CLOUD = "cloud"


class DatasetError(ValueError):
    """Raised when a dataset file or record violates the record schema."""

    def __init__(self, message: str, line: Optional[int] = None, image_id: Optional[str] = None):
        self.line = line
        self.image_id = image_id
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if image_id is not None:
            prefix.append(f"image_id {image_id!r}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)


@dataclass(frozen=True)
class DetectionBox:
    confidence: float
    class_tag: Optional[str] = None

    def __post_init__(self):
        c = self.confidence
        if not isinstance(c, (int, float)) or isinstance(c, bool) or not math.isfinite(c):
            raise ValueError(f"confidence must be a finite number, got {c!r}")
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence {c} outside [0, 1]")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    truth_count: int
    stage_detections: Mapping[str, tuple[DetectionBox, ...]]

    def __post_init__(self):
        if self.truth_count < 0:
            raise DatasetError("truth_count must be >= 0", image_id=self.image_id)
        if PHONE not in self.stage_detections:
            raise DatasetError("record has no 'phone' stage", image_id=self.image_id)

    @property
    def truth_alert(self) -> AlertLevel:
        return alert_of_count(self.truth_count)

    def confidences(self, stage: str) -> list[float]:
        try:
            boxes = self.stage_detections[stage]
        except KeyError:
            raise DatasetError(f"missing stage {stage!r}", image_id=self.image_id) from None
        return [b.confidence for b in boxes]


@dataclass(frozen=True)
class Dataset:
    records: tuple[ImageRecord, ...]
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            seen = set()
            for i in ids:
                if i in seen:
                    raise DatasetError("duplicate image_id", image_id=i)
                seen.add(i)
        if ids != sorted(ids):
            object.__setattr__(
                self, "records", tuple(sorted(self.records, key=lambda r: r.image_id))
            )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(r.image_id for r in self.records)

    @cached_property
    def truth_alerts(self) -> np.ndarray:
        """Truth alert codes (int8), in record order."""
        return np.array([int(r.truth_alert) for r in self.records], dtype=np.int8)

    def stages(self) -> set[str]:
        """Stage names present on every record."""
        if not self.records:
            return set()
        common = set(self.records[0].stage_detections)
        for r in self.records[1:]:
            common &= set(r.stage_detections)
        return common

    def require_stage(self, stage: str) -> None:
        for r in self.records:
            if stage not in r.stage_detections:
                raise DatasetError(f"missing stage {stage!r}", image_id=r.image_id)

    def flat_confidences(self, stage: str) -> tuple[np.ndarray, np.ndarray]:
        """All box confidences of ``stage`` with the row index of their image."""
        cache = self.__dict__.setdefault("_flat", {})
        if stage not in cache:
            self.require_stage(stage)
            rows, confs = [], []
            for i, r in enumerate(self.records):
                cs = r.confidences(stage)
                rows.extend([i] * len(cs))
                confs.extend(cs)
            cache[stage] = (np.asarray(rows, dtype=np.int64), np.asarray(confs, dtype=np.float64))
        return cache[stage]


def truth_alert(record: ImageRecord) -> AlertLevel:
    return alert_of_count(record.truth_count)


def class_counts(dataset: Dataset) -> dict[AlertLevel, int]:
    """Number of records per truth alert; all three levels are always present."""
    if not len(dataset):
        raise DatasetError("dataset is empty")
    counts = {level: 0 for level in AlertLevel}
    for r in dataset.records:
        counts[truth_alert(r)] += 1
    return counts


def _parse_box(raw, line: int, image_id: str, strict: bool) -> DetectionBox:
    if not isinstance(raw, Mapping) or "c" not in raw:
        raise DatasetError("box must be an object with a 'c' field", line, image_id)
    c = raw["c"]
    tag = raw.get("k")
    if tag is not None and not isinstance(tag, str):
        raise DatasetError("box tag 'k' must be a string", line, image_id)
    try:
        box = DetectionBox(c, tag)
    except ValueError as exc:
        raise DatasetError(str(exc), line, image_id) from None
    if strict and not 0.0 < box.confidence < 1.0:
        raise DatasetError(
            f"confidence {box.confidence} not in the open interval (0, 1)", line, image_id
        )
    return box


def parse_record(obj, line: int = 0, strict: bool = True) -> ImageRecord:
    if not isinstance(obj, Mapping):
        raise DatasetError("record must be a JSON object", line)
    image_id = obj.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        raise DatasetError("missing or non-string image_id", line)
    if "truth_count" not in obj:
        raise DatasetError("missing truth_count", line, image_id)
    truth = obj["truth_count"]
    if not isinstance(truth, int) or isinstance(truth, bool) or truth < 0:
        raise DatasetError(f"truth_count must be a non-negative integer, got {truth!r}", line, image_id)
    stages = obj.get("stages")
    if not isinstance(stages, Mapping):
        raise DatasetError("missing 'stages' object", line, image_id)
    detections = {}
    for name, boxes in stages.items():
        if not isinstance(boxes, list):
            raise DatasetError(f"stage {name!r} must be a list of boxes", line, image_id)
        detections[name] = tuple(_parse_box(b, line, image_id, strict) for b in boxes)
    return ImageRecord(image_id, truth, detections)


def load_dataset(path, strict: bool = True) -> Dataset:
    """Read a line-delimited dataset file; records come back sorted by image_id."""
    records: list[ImageRecord] = []
    metadata: dict = {}
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"malformed JSON ({exc.msg})", lineno) from None
            if isinstance(obj, Mapping) and set(obj) == {"meta"}:
                if records or metadata:
                    raise DatasetError("meta line must be the first line", lineno)
                if not isinstance(obj["meta"], Mapping):
                    raise DatasetError("meta must be an object", lineno)
                metadata = dict(obj["meta"])
                continue
            rec = parse_record(obj, lineno, strict)
            if rec.image_id in seen:
                raise DatasetError(
                    f"duplicate image_id (first seen on line {seen[rec.image_id]})",
                    lineno,
                    rec.image_id,
                )
            seen[rec.image_id] = lineno
            records.append(rec)
    return Dataset(tuple(sorted(records, key=lambda r: r.image_id)), metadata)


def record_to_json(record: ImageRecord) -> dict:
    stages = {}
    for name in sorted(record.stage_detections):
        boxes = []
        for b in record.stage_detections[name]:
            entry = {"c": b.confidence}
            if b.class_tag is not None:
                entry["k"] = b.class_tag
            boxes.append(entry)
        stages[name] = boxes
    return {"image_id": record.image_id, "truth_count": record.truth_count, "stages": stages}


def dumps_dataset(dataset: Dataset) -> str:
    lines = []
    if dataset.metadata:
        lines.append(json.dumps({"meta": dict(dataset.metadata)}, sort_keys=True))
    lines.extend(json.dumps(record_to_json(r)) for r in dataset.records)
    return "".join(line + "\n" for line in lines)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def make_record(
    image_id: str,
    truth_count: int,
    stages: Mapping[str, Sequence[float]],
    tags: Optional[Mapping[str, Sequence[Optional[str]]]] = None,
) -> ImageRecord:
    """Convenience constructor from plain confidence lists."""
    detections = {}
    for name, confs in stages.items():
        stage_tags = (tags or {}).get(name) or [None] * len(confs)
        detections[name] = tuple(DetectionBox(float(c), t) for c, t in zip(confs, stage_tags))
    return ImageRecord(image_id, truth_count, detections)


def from_records(records: Iterable[ImageRecord], metadata: Optional[Mapping] = None) -> Dataset:
    return Dataset(tuple(sorted(records, key=lambda r: r.image_id)), dict(metadata or {}))
