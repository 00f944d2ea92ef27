"""Acceptance suite: one marked group per criterion, each with its own time budget."""

import hashlib
import math
import time

import numpy as np
import pytest

from abstention_cascade.alerts import AlertLevel, alert_of_count
from abstention_cascade.cascade import (
    ROUTE_CLOUD,
    ROUTE_HUMAN,
    ROUTE_PHONE,
    combined_evaluate,
    comparison_curves,
)
from abstention_cascade.cli import main
from abstention_cascade.dataset import save_dataset
from abstention_cascade.deploysim import HOUR, fit_cloud_defaults, histogram_mode, sample_cloud
from abstention_cascade.metrics import ConfusionMatrix, mcc
from abstention_cascade.sweep import abstain_all, make_grid, sweep_stage
from abstention_cascade.synth import SynthConfig, generate_synthetic
from abstention_cascade.window import Window, decide, partition


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f}s, budget {self.seconds}s"


# AC1


@pytest.mark.criterion(1, "alert rule exact on counts 0..1000")
def test_alert_rule_exhaustive():
    with Budget(1):
        for n in range(1001):
            expected = AlertLevel.NO_ACTION if n == 0 else AlertLevel.CAUTIOUS if n <= 7 else AlertLevel.SPRAY
            assert alert_of_count(n) is expected


# AC2

N_CASES = 10_000


def _random_case(rng):
    confs = rng.uniform(1e-6, 1 - 1e-6, size=rng.integers(0, 25)).tolist()
    if confs and rng.random() < 0.3:
        # put some bounds exactly on a confidence to exercise the strict comparisons
        a, b = sorted(rng.choice(confs, size=2))
    else:
        a, b = sorted(rng.uniform(0, 0.99, size=2))
    return confs, Window(float(a), float(b))


@pytest.fixture(scope="module")
def windowing_cases():
    rng = np.random.default_rng(20240601)
    return [(*_random_case(rng), rng.uniform(0, 0.99, size=2)) for _ in range(N_CASES)]


@pytest.mark.criterion(2, "windowing invariants over 10,000 random cases")
def test_u_not_above_l(windowing_cases):
    with Budget(10):
        for confs, w, _ in windowing_cases:
            p = partition(confs, w)
            assert p.u <= p.l


@pytest.mark.criterion(2, "windowing invariants over 10,000 random cases")
def test_permutation_invariance(windowing_cases):
    rng = np.random.default_rng(7)
    with Budget(10):
        for confs, w, _ in windowing_cases:
            assert decide(confs, w) == decide(list(rng.permutation(confs)), w)


@pytest.mark.criterion(2, "windowing invariants over 10,000 random cases")
def test_equal_bounds_never_abstain(windowing_cases):
    with Budget(10):
        for confs, w, _ in windowing_cases:
            assert not decide(confs, Window(w.lower, w.lower)).abstained
            assert not decide(confs, Window(w.upper, w.upper)).abstained


@pytest.mark.criterion(2, "windowing invariants over 10,000 random cases")
def test_widening_monotone(windowing_cases):
    with Budget(10):
        for confs, w, extra in windowing_cases:
            wide = Window(min(w.lower, float(extra[0])), max(w.upper, float(extra[1])))
            assert wide.widens(w)
            if decide(confs, w).abstained:
                assert decide(confs, wide).abstained


# AC3


def _binary_mcc(tp, fn, fp, tn):
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)


@pytest.mark.criterion(3, "multiclass MCC matches the binary formula; uniform 0; diagonal 1")
def test_mcc_binary_oracle():
    rng = np.random.default_rng(99)
    with Budget(5):
        for _ in range(1000):
            pos, neg = rng.choice(3, size=2, replace=False)
            tp, fn, fp, tn = (int(x) for x in rng.integers(0, 500, size=4))
            cells = np.zeros((3, 3), dtype=np.int64)
            cells[pos, pos], cells[pos, neg], cells[neg, pos], cells[neg, neg] = tp, fn, fp, tn
            assert abs(mcc(ConfusionMatrix(cells)) - _binary_mcc(tp, fn, fp, tn)) <= 1e-12


@pytest.mark.criterion(3, "multiclass MCC matches the binary formula; uniform 0; diagonal 1")
def test_mcc_uniform_and_diagonal():
    rng = np.random.default_rng(5)
    with Budget(5):
        for k in range(1, 200):
            assert mcc(ConfusionMatrix(np.full((3, 3), k, dtype=np.int64))) == 0.0
        for _ in range(500):
            diag = rng.integers(1, 10_000, size=3)
            if rng.random() < 0.3:
                diag[rng.integers(3)] = 0  # two active classes
            assert mcc(ConfusionMatrix(np.diag(diag).astype(np.int64))) == 1.0


# AC4


@pytest.fixture(scope="module")
def corner_set():
    return generate_synthetic(SynthConfig(n_images=200, seed=31))


@pytest.mark.criterion(4, "combined-evaluation corners and routing partition")
def test_all_human_corner(corner_set):
    phone = abstain_all(corner_set, "phone")
    cloud = abstain_all(corner_set, "cloud", phone.abstained_rows)
    r = combined_evaluate(corner_set, phone, cloud)
    assert r.mcc == 1.0
    assert r.n_human == len(corner_set)


@pytest.mark.criterion(4, "combined-evaluation corners and routing partition")
def test_phone_only_corner(corner_set):
    for c in sweep_stage(corner_set, "phone", make_grid(0.05)):
        if c.report.n_abstained == 0:
            r = combined_evaluate(corner_set, c, None)
            assert abs(r.mcc - c.report.mcc) <= 1e-12


@pytest.mark.criterion(4, "combined-evaluation corners and routing partition")
def test_routing_partitions(corner_set):
    n = len(corner_set)
    grid = make_grid(0.1)
    for p in sweep_stage(corner_set, "phone", grid):
        rows = p.abstained_rows
        clouds = sweep_stage(corner_set, "cloud", grid, rows=rows) if rows.size else [None]
        for c in clouds:
            r = combined_evaluate(corner_set, p, c)
            counts = [int(np.count_nonzero(r.route == k)) for k in (ROUTE_PHONE, ROUTE_CLOUD, ROUTE_HUMAN)]
            assert sum(counts) == n
            assert counts == [r.n_phone_accepted, r.n_cloud_accepted, r.n_human]


# AC5


@pytest.mark.criterion(5, "forcing cloud abstention never lowers combined correct count")
def test_deferral_to_human_monotone(corner_set):
    grid = make_grid(0.1)
    with Budget(30):
        for p in sweep_stage(corner_set, "phone", grid):
            rows = p.abstained_rows
            if not rows.size:
                continue
            all_human = combined_evaluate(corner_set, p, abstain_all(corner_set, "cloud", rows))
            for c in sweep_stage(corner_set, "cloud", grid, rows=rows):
                assert all_human.n_correct >= combined_evaluate(corner_set, p, c).n_correct


# AC6


@pytest.fixture(scope="module")
def ac6_start():
    return time.perf_counter()


@pytest.fixture(scope="module")
def reference_set(ac6_start):
    return generate_synthetic(SynthConfig(n_images=2000))


@pytest.mark.criterion(6, "figure shapes on 2,000 synthetic images")
def test_heatmap_shape(reference_set, ac6_start):
    grid = make_grid(0.05)
    cands = sweep_stage(reference_set, "phone", grid)
    frac = {c.window: c.report.abstention_fraction for c in cands}
    assert all(v == 0.0 for w, v in frac.items() if w.lower == w.upper)
    widest = Window(grid.thresholds[0], grid.thresholds[-1])
    assert frac[widest] == max(frac.values())
    assert frac[widest] > 0


@pytest.mark.criterion(6, "figure shapes on 2,000 synthetic images")
def test_combined_fa_below_phone_only(reference_set, ac6_start):
    grid = make_grid(0.05)
    curves = {c.family: c for c in comparison_curves(reference_set, grid, grid)}

    def low_mean(family):
        ys = [p.fa_smoothed for p in curves[family].points if p.abstention_fraction < 0.2]
        assert ys, f"{family} has no points below 0.2"
        return float(np.mean(ys))

    combined, phone = low_mean("combined"), low_mean("phone-only")
    print(f"mean smoothed FA below 0.2: combined {combined:.5f}, phone-only {phone:.5f}")
    assert combined <= phone
    assert time.perf_counter() - ac6_start < 120


# AC7


@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("ac7") / "data.jsonl"
    save_dataset(generate_synthetic(SynthConfig(n_images=300, seed=17)), path)
    return path


def _hash(path):
    if path.is_file():
        return hashlib.sha256(path.read_bytes()).hexdigest()
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


@pytest.mark.criterion(7, "byte-identical outputs across workers and reruns")
@pytest.mark.parametrize("command, extra, is_dir", [
    ("sweep", [], True),
    ("cascade", ["--step", "0.1"], False),
])
def test_workers_identical(cli_data, tmp_path, command, extra, is_dir):
    digests = []
    for workers in (1, 4, 8):
        out = tmp_path / f"{command}-{workers}" if is_dir else tmp_path / f"{command}-{workers}.csv"
        assert main([command, str(cli_data), *extra, "--workers", str(workers), "--out", str(out)]) == 0
        digests.append(_hash(out))
    assert digests[0] == digests[1] == digests[2]


@pytest.mark.criterion(7, "byte-identical outputs across workers and reruns")
def test_synth_rerun(tmp_path):
    outs = [tmp_path / f"s{k}.jsonl" for k in range(2)]
    for out in outs:
        assert main(["synth", "--n-images", "300", "--seed", "4", "--out", str(out)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()


@pytest.mark.criterion(7, "byte-identical outputs across workers and reruns")
def test_simulate_rerun(cli_data, tmp_path):
    base = ["simulate", str(cli_data), "--phone-window", "0.1", "0.8", "--cloud-window", "0.2", "0.7", "--seed", "12"]
    for k in range(2):
        assert main(base + ["--out", str(tmp_path / f"r{k}")]) == 0
    assert _hash(tmp_path / "r0") == _hash(tmp_path / "r1")


# AC8


@pytest.mark.criterion(8, "cloud latency mixture: mean 7 h, mode 12 h")
def test_simulator_calibration():
    with Budget(10):
        comps = fit_cloud_defaults(7 * HOUR, 12 * HOUR)
        draws = sample_cloud(comps, 100_000, np.random.default_rng(0))
        mean, mode = float(draws.mean()), histogram_mode(draws)
    print(f"sample mean {mean / HOUR:.3f} h, histogram mode {mode / HOUR:.2f} h")
    assert abs(mean - 7 * HOUR) <= 0.05 * 7 * HOUR
    assert abs(mode - 12 * HOUR) <= 0.5 * HOUR
