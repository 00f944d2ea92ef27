import pytest

from abstention_cascade.dataset import from_records, make_record
from abstention_cascade.synth import StageNoise, SynthConfig, generate_synthetic

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria, key=int):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] AC{number}: {title}")


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic(SynthConfig(n_images=60, seed=7))


@pytest.fixture(scope="session")
def noiseless():
    stage = StageNoise(miss_rate=0.0, false_positive_rate=0.0)
    return generate_synthetic(
        SynthConfig(n_images=40, seed=3, stages={"phone": stage, "cloud": stage}, tp_confidence=0.9)
    )


@pytest.fixture
def tiny():
    return from_records(
        [
            make_record("b", 3, {"phone": [0.10, 0.35, 0.62, 0.91], "cloud": [0.7, 0.8, 0.9]}),
            make_record("a", 0, {"phone": [], "cloud": [0.05]}),
            make_record("c", 9, {"phone": [0.5] * 9 + [0.9], "cloud": [0.9] * 9}),
        ],
        {"version": "test"},
    )
