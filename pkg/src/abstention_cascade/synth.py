"""Seeded synthetic detection datasets.

A desk-scale stand-in for a real trap-photo validation set: truth counts come
from a categorical distribution, and each stage sees every pest independently
(missed with ``miss_rate``), plus Poisson-distributed false positives. True
and false positive confidences are Beta distributed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .alerts import SPRAY_MIN_COUNT
from .dataset import CLOUD, PHONE, Dataset, DetectionBox, ImageRecord

# Class sizes of the reference validation set (NoAction, Cautious, Spray).
REFERENCE_CLASS_SIZES = (698, 728, 667)

# Confidences are kept strictly inside (0, 1).
_EPS = 1e-9


@dataclass(frozen=True)
class StageNoise:
    miss_rate: float = 0.15
    false_positive_rate: float = 2.0
    tp_alpha: float = 4.0
    tp_beta: float = 1.0
    fp_alpha: float = 1.0
    fp_beta: float = 4.0

    def validate(self, name: str) -> None:
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"{name}: miss_rate must lie in [0, 1]")
        if self.false_positive_rate < 0:
            raise ValueError(f"{name}: false_positive_rate must be >= 0")
        for attr in ("tp_alpha", "tp_beta", "fp_alpha", "fp_beta"):
            if not getattr(self, attr) > 0:
                raise ValueError(f"{name}: {attr} must be > 0")


def _halved_variance(alpha: float, beta: float) -> tuple[float, float]:
    # Beta variance is m(1-m)/(a+b+1); keep the mean, halve the variance.
    s = alpha + beta
    scale = (2 * s + 1) / s
    return alpha * scale, beta * scale


def default_phone_noise() -> StageNoise:
    return StageNoise()


def default_cloud_noise() -> StageNoise:
    phone = default_phone_noise()
    tp_a, tp_b = _halved_variance(phone.tp_alpha, phone.tp_beta)
    fp_a, fp_b = _halved_variance(phone.fp_alpha, phone.fp_beta)
    return StageNoise(
        miss_rate=0.05,
        false_positive_rate=phone.false_positive_rate / 3,
        tp_alpha=tp_a,
        tp_beta=tp_b,
        fp_alpha=fp_a,
        fp_beta=fp_b,
    )


def reference_count_weights(max_count: int = 20) -> tuple[float, ...]:
    """Count weights reproducing the reference class proportions.

    Count 0 carries the NoAction mass; the Cautious and Spray masses are spread
    uniformly over 1..7 and 8..max_count.
    """
    if max_count < SPRAY_MIN_COUNT:
        raise ValueError(f"max_count must be >= {SPRAY_MIN_COUNT}")
    none, cautious, spray = REFERENCE_CLASS_SIZES
    n_spray = max_count - SPRAY_MIN_COUNT + 1
    weights = [float(none)]
    weights += [cautious / (SPRAY_MIN_COUNT - 1)] * (SPRAY_MIN_COUNT - 1)
    weights += [spray / n_spray] * n_spray
    return tuple(weights)


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 2000
    count_weights: tuple[float, ...] = field(default_factory=reference_count_weights)
    stages: Mapping[str, StageNoise] = field(
        default_factory=lambda: {PHONE: default_phone_noise(), CLOUD: default_cloud_noise()}
    )
    seed: int = 0
    tp_confidence: Optional[float] = None  # fixed TP confidence, overrides the Beta draw
    class_tags: tuple[str, ...] = ()

    def validate(self) -> None:
        if not isinstance(self.n_images, int) or self.n_images <= 0:
            raise ValueError("n_images must be a positive integer")
        w = np.asarray(self.count_weights, dtype=float)
        if w.ndim != 1 or not len(w) or (w < 0).any() or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValueError("count_weights must be non-negative and normalizable")
        if PHONE not in self.stages:
            raise ValueError("a 'phone' stage is required")
        for name, noise in self.stages.items():
            noise.validate(name)
        if self.tp_confidence is not None and not 0.0 < self.tp_confidence < 1.0:
            raise ValueError("tp_confidence must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_metadata(self) -> dict:
        return {
            "source": "synthetic",
            "n_images": self.n_images,
            "seed": self.seed,
            "count_weights": [float(x) for x in self.count_weights],
            "stages": {
                name: {
                    "miss_rate": n.miss_rate,
                    "false_positive_rate": n.false_positive_rate,
                    "tp_beta": [n.tp_alpha, n.tp_beta],
                    "fp_beta": [n.fp_alpha, n.fp_beta],
                }
                for name, n in sorted(self.stages.items())
            },
        }


def _clip(x: np.ndarray) -> np.ndarray:
    return np.clip(x, _EPS, 1.0 - _EPS)


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Draw a dataset; the output is a pure function of ``config`` (seed included)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    w = np.asarray(config.count_weights, dtype=float)
    counts = rng.choice(len(w), size=config.n_images, p=w / w.sum())
    width = len(str(config.n_images - 1))
    stage_names = sorted(config.stages)
    records = []
    for i, truth in enumerate(counts):
        truth = int(truth)
        detections = {}
        for name in stage_names:
            noise = config.stages[name]
            n_tp = int(rng.binomial(truth, 1.0 - noise.miss_rate)) if truth else 0
            if config.tp_confidence is not None:
                tp = np.full(n_tp, config.tp_confidence)
            else:
                tp = _clip(rng.beta(noise.tp_alpha, noise.tp_beta, size=n_tp))
            n_fp = int(rng.poisson(noise.false_positive_rate))
            fp = _clip(rng.beta(noise.fp_alpha, noise.fp_beta, size=n_fp))
            confs = np.concatenate([tp, fp])
            if config.class_tags:
                tags = rng.choice(len(config.class_tags), size=len(confs))
                boxes = tuple(
                    DetectionBox(float(c), config.class_tags[t]) for c, t in zip(confs, tags)
                )
            else:
                boxes = tuple(DetectionBox(float(c)) for c in confs)
            detections[name] = boxes
        records.append(ImageRecord(f"img-{i:0{width}d}", truth, detections))
    return Dataset(tuple(records), config.to_metadata())
