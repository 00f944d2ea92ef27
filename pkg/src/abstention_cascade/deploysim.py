"""Seeded discrete-event simulation of a deployed cascade.

Images arrive as a Poisson stream. The phone answers after a constant delay;
images the phone defers wait for a cloud response drawn from a lognormal
mixture; images the cloud also defers join a FIFO queue served by human
reviewers who only start reviews inside a daily working window.

The latency model is configured through an INI-style key=value file::

    [phone]
    seconds = 0.5

    [cloud]                 ; either fit a mixture to targets ...
    target_mean_hours = 7
    target_mode_hours = 12

    [cloud.0]               ; ... or list components explicitly (log-seconds)
    weight = 0.6
    log_mean = 9.4
    log_sigma = 0.7

    [human]
    reviewers = 2
    review_mean_seconds = 600
    schedule_start_hour = 9
    schedule_hours = 8

    [arrivals]
    per_hour = 12
"""

from __future__ import annotations

import configparser
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ._csvio import render
from .cascade import ROUTE_CLOUD, ROUTE_HUMAN, ROUTE_PHONE, combined_evaluate
from .dataset import Dataset
from .sweep import Candidate

HOUR = 3600.0
DAY = 24 * HOUR
MODE_BIN_SECONDS = 0.5 * HOUR
ROUTE_NAMES = {ROUTE_PHONE: "phone", ROUTE_CLOUD: "cloud", ROUTE_HUMAN: "human"}


@dataclass(frozen=True)
class LognormalComponent:
    weight: float
    log_mean: float  # mean of log(seconds)
    log_sigma: float

    @property
    def mean(self) -> float:
        return math.exp(self.log_mean + self.log_sigma**2 / 2)

    @property
    def mode(self) -> float:
        return math.exp(self.log_mean - self.log_sigma**2)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        z = (np.log(x[pos]) - self.log_mean) / (self.log_sigma * math.sqrt(2))
        out[pos] = 0.5 * (1 + np.vectorize(math.erf)(z))
        return out


@dataclass(frozen=True)
class HumanReview:
    reviewers: int = 2
    review_mean_seconds: float = 600.0  # exponential; 0 means instantaneous
    schedule_start_hour: float = 9.0
    schedule_hours: float = 8.0

    def in_schedule(self, t: float) -> bool:
        if self.schedule_hours >= 24:
            return True
        h = (t % DAY) / HOUR
        end = self.schedule_start_hour + self.schedule_hours
        if end <= 24:
            return self.schedule_start_hour <= h < end
        return h >= self.schedule_start_hour or h < end - 24

    def next_open(self, t: float) -> float:
        if self.in_schedule(t):
            return t
        start = math.floor(t / DAY) * DAY + self.schedule_start_hour * HOUR
        return start if start > t else start + DAY


@dataclass(frozen=True)
class LatencyModel:
    cloud: tuple[LognormalComponent, ...]
    phone_seconds: float = 0.5
    human: HumanReview = field(default_factory=HumanReview)
    arrivals_per_hour: float = 12.0

    def validate(self) -> None:
        if not self.phone_seconds > 0:
            raise ValueError("phone latency must be positive")
        if not self.cloud:
            raise ValueError("cloud mixture needs at least one component")
        if not math.isclose(sum(c.weight for c in self.cloud), 1.0, abs_tol=1e-9):
            raise ValueError("cloud mixture weights must sum to 1")
        for c in self.cloud:
            if not c.weight > 0 or not c.log_sigma > 0 or not math.isfinite(c.log_mean):
                raise ValueError(f"invalid cloud component {c}")
        h = self.human
        if h.reviewers < 0:
            raise ValueError("reviewer count must be >= 0")
        if h.review_mean_seconds < 0:
            raise ValueError("review time must be >= 0")
        if not 0 < h.schedule_hours <= 24 or not 0 <= h.schedule_start_hour < 24:
            raise ValueError("schedule window must lie within a day")
        if not self.arrivals_per_hour > 0:
            raise ValueError("arrival rate must be positive")

    @property
    def cloud_mean(self) -> float:
        return sum(c.weight * c.mean for c in self.cloud)


def sample_cloud(components: Sequence[LognormalComponent], n: int, rng: np.random.Generator) -> np.ndarray:
    weights = np.array([c.weight for c in components])
    which = rng.choice(len(components), size=n, p=weights / weights.sum())
    mu = np.array([c.log_mean for c in components])[which]
    sigma = np.array([c.log_sigma for c in components])[which]
    return np.exp(mu + sigma * rng.standard_normal(n))


def histogram_mode(samples: np.ndarray, bin_seconds: float = MODE_BIN_SECONDS) -> float:
    """Center of the most populated fixed-width bin starting at 0."""
    samples = np.asarray(samples, dtype=float)
    if not samples.size:
        raise ValueError("mode of an empty sample")
    idx = np.floor(samples / bin_seconds).astype(np.int64)
    k = int(np.argmax(np.bincount(idx)))
    return (k + 0.5) * bin_seconds


def _bin_masses(c: LognormalComponent, edges: np.ndarray) -> np.ndarray:
    return np.diff(c.cdf(edges))


@lru_cache(maxsize=16)
def fit_cloud_defaults(
    target_mean: float,
    target_mode: float,
    bin_seconds: float = MODE_BIN_SECONDS,
    min_margin: float = 1.3,
) -> tuple[LognormalComponent, ...]:
    """Lognormal mixture whose mean and histogram mode hit the targets (seconds).

    A single lognormal always has its mode below its mean, so ``mode <= mean``
    is solved with one component. ``mode > mean`` needs a mixture: a narrow
    delayed-sync component peaked at the target mode plus a broad fast
    component that pulls the mean down. The search keeps mixtures whose
    binned mode sits on the target and whose peak bin beats every bin more
    than one bin away by ``min_margin``; among those it takes the widest
    delayed component, then the largest margin.
    """
    if not target_mean > 0 or not target_mode > 0:
        raise ValueError("latency targets must be positive")
    if target_mode <= target_mean:
        sigma = math.sqrt(math.log(target_mean / target_mode) / 1.5) if target_mode < target_mean else 1e-3
        return (LognormalComponent(1.0, math.log(target_mean) - sigma**2 / 2, sigma),)

    edges = np.arange(0.0, 4 * target_mode + bin_seconds, bin_seconds)
    centers = edges[:-1] + bin_seconds / 2
    far = np.abs(centers - target_mode) > 1.5 * bin_seconds
    fast_options = []
    for mean_f in np.arange(0.5, 24.0, 0.5) * HOUR:
        if mean_f >= target_mean:
            break
        for s_f in np.round(np.arange(0.3, 1.51, 0.1), 2):
            c = LognormalComponent(1.0, math.log(mean_f) - s_f**2 / 2, float(s_f))
            fast_options.append((c, _bin_masses(c, edges)))

    best = None
    for s_d in np.round(np.arange(0.03, 0.31, 0.01), 2):
        delayed = LognormalComponent(1.0, math.log(target_mode) + s_d**2, float(s_d))
        if delayed.mean <= target_mean:
            continue
        d_mass = _bin_masses(delayed, edges)
        for fast, f_mass in fast_options:
            w = (delayed.mean - target_mean) / (delayed.mean - fast.mean)
            if not 0 < w < 1:
                continue
            mass = w * f_mass + (1 - w) * d_mass
            k = int(np.argmax(mass))
            if abs(centers[k] - target_mode) > bin_seconds / 2 + 1e-9:
                continue
            margin = mass[k] / mass[far].max()
            if margin < min_margin:
                continue
            key = (s_d, margin)
            if best is None or key > best[0]:
                best = (key, w, fast, delayed)
    if best is None:
        raise ValueError(f"no mixture reaches mean {target_mean}s with mode {target_mode}s")
    _, w, fast, delayed = best
    return (
        LognormalComponent(float(w), fast.log_mean, fast.log_sigma),
        LognormalComponent(float(1 - w), delayed.log_mean, delayed.log_sigma),
    )


def default_latency_model() -> LatencyModel:
    """Phone well under a second; cloud mean about 7 h with a mode near 12 h."""
    return LatencyModel(cloud=fit_cloud_defaults(7 * HOUR, 12 * HOUR))


def load_latency_model(path) -> LatencyModel:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    return latency_model_from_config(cp)


def latency_model_from_config(cp: configparser.ConfigParser) -> LatencyModel:
    base = default_latency_model()
    phone = cp.getfloat("phone", "seconds", fallback=base.phone_seconds)
    comps = []
    for name in sorted(s for s in cp.sections() if s.startswith("cloud.")):
        sec = cp[name]
        comps.append(
            LognormalComponent(sec.getfloat("weight"), sec.getfloat("log_mean"), sec.getfloat("log_sigma"))
        )
    if not comps and cp.has_section("cloud"):
        mean_h = cp.getfloat("cloud", "target_mean_hours", fallback=7.0)
        mode_h = cp.getfloat("cloud", "target_mode_hours", fallback=12.0)
        comps = list(fit_cloud_defaults(mean_h * HOUR, mode_h * HOUR))
    h = base.human
    human = HumanReview(
        reviewers=cp.getint("human", "reviewers", fallback=h.reviewers),
        review_mean_seconds=cp.getfloat("human", "review_mean_seconds", fallback=h.review_mean_seconds),
        schedule_start_hour=cp.getfloat("human", "schedule_start_hour", fallback=h.schedule_start_hour),
        schedule_hours=cp.getfloat("human", "schedule_hours", fallback=h.schedule_hours),
    )
    model = LatencyModel(
        cloud=tuple(comps) or base.cloud,
        phone_seconds=phone,
        human=human,
        arrivals_per_hour=cp.getfloat("arrivals", "per_hour", fallback=base.arrivals_per_hour),
    )
    model.validate()
    return model


@dataclass(frozen=True, eq=False)
class SimReport:
    image_ids: tuple[str, ...]
    route: np.ndarray
    arrival: np.ndarray
    latency: np.ndarray
    reviews_per_day: dict[int, int]
    queue_depth: tuple[tuple[float, int], ...]
    queue_entered: int
    queue_left: int

    def __eq__(self, other):
        if not isinstance(other, SimReport):
            return NotImplemented
        return (
            self.image_ids == other.image_ids
            and np.array_equal(self.route, other.route)
            and np.array_equal(self.arrival, other.arrival)
            and np.array_equal(self.latency, other.latency)
            and self.reviews_per_day == other.reviews_per_day
            and self.queue_depth == other.queue_depth
            and (self.queue_entered, self.queue_left) == (other.queue_entered, other.queue_left)
        )

    __hash__ = None

    @property
    def final_queue_depth(self) -> int:
        return self.queue_depth[-1][1] if self.queue_depth else 0

    def summary(self) -> dict[str, float]:
        lat = self.latency
        return {
            "n_images": float(len(lat)),
            "mean_s": float(lat.mean()),
            "median_s": float(np.median(lat)),
            "mode_s": histogram_mode(lat),
            "p95_s": float(np.percentile(lat, 95)),
            "n_phone": float(np.count_nonzero(self.route == ROUTE_PHONE)),
            "n_cloud": float(np.count_nonzero(self.route == ROUTE_CLOUD)),
            "n_human": float(np.count_nonzero(self.route == ROUTE_HUMAN)),
            "max_queue_depth": float(max((d for _, d in self.queue_depth), default=0)),
        }


_ENTER, _FREE, _OPEN = 0, 1, 2


def simulate(
    dataset: Dataset,
    phone: Candidate,
    cloud: Optional[Candidate],
    model: LatencyModel,
    seed: int = 0,
) -> SimReport:
    """Route each image through the cascade and time its recommendation.

    ``cloud`` must be conditioned on ``phone``'s abstained images (or None if
    the phone never abstains).
    """
    model.validate()
    route = combined_evaluate(dataset, phone, cloud).route
    n = len(dataset)
    rng = np.random.default_rng(seed)
    arrival = np.cumsum(rng.exponential(HOUR / model.arrivals_per_hour, size=n))
    latency = np.full(n, model.phone_seconds)
    deferred = np.flatnonzero(route != ROUTE_PHONE)
    latency[deferred] += sample_cloud(model.cloud, len(deferred), rng)

    human = np.flatnonzero(route == ROUTE_HUMAN)
    review = model.human
    if human.size and review.reviewers == 0:
        raise ValueError("images are routed to human review but no reviewers are configured")

    events: list = []
    seq = 0

    def push(t, kind, payload):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, payload))
        seq += 1

    for i in human:
        push(float(arrival[i] + latency[i]), _ENTER, int(i))

    queue: deque[int] = deque()
    idle = review.reviewers
    open_pending = False
    depth_log: list[tuple[float, int]] = []
    reviews_per_day: dict[int, int] = {}
    entered = left = 0
    done_at = {}

    while events:
        t, _, kind, payload = heapq.heappop(events)
        if kind == _ENTER:
            queue.append(payload)
            entered += 1
            depth_log.append((t, len(queue)))
        elif kind == _FREE:
            idle += 1
        else:
            open_pending = False
        if not queue:
            continue
        if review.in_schedule(t):
            while idle and queue:
                job = queue.popleft()
                left += 1
                depth_log.append((t, len(queue)))
                idle -= 1
                dur = rng.exponential(review.review_mean_seconds) if review.review_mean_seconds > 0 else 0.0
                finish = t + dur
                done_at[job] = finish
                day = int(finish // DAY)
                reviews_per_day[day] = reviews_per_day.get(day, 0) + 1
                push(finish, _FREE, None)
        elif not open_pending:
            open_pending = True
            push(review.next_open(t), _OPEN, None)

    for job, finish in done_at.items():
        latency[job] = finish - arrival[job]
    return SimReport(
        dataset.image_ids,
        route,
        arrival,
        latency,
        dict(sorted(reviews_per_day.items())),
        tuple(depth_log),
        entered,
        left,
    )


def export_latencies(report: SimReport, comments: Sequence[str] = ()) -> str:
    rows = (
        (iid, ROUTE_NAMES[int(r)], float(a), float(lat))
        for iid, r, a, lat in zip(report.image_ids, report.route, report.arrival, report.latency)
    )
    return render(("image_id", "route", "arrival_s", "latency_s"), rows, comments)


def export_summary(report: SimReport, comments: Sequence[str] = ()) -> str:
    rows = list(report.summary().items())
    rows += [(f"reviews_day_{d}", float(c)) for d, c in report.reviews_per_day.items()]
    return render(("statistic", "value"), rows, comments)
