import hashlib
import json
import subprocess
import sys

import pytest

from abstention_cascade.cli import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from abstention_cascade.dataset import load_dataset, save_dataset
from abstention_cascade.synth import SynthConfig, generate_synthetic


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synth.jsonl"
    save_dataset(generate_synthetic(SynthConfig(n_images=80, seed=11)), path)
    return path


def _digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_sweep_outputs(data_file, tmp_path):
    assert main(["sweep", str(data_file), "--out", str(tmp_path), "--window", "0.3", "0.6"]) == EXIT_OK
    names = {p.name for p in tmp_path.iterdir()}
    assert {"candidates.csv", "diagnostics.csv", "heatmap_mcc.csv"} <= names
    rows = [l for l in (tmp_path / "candidates.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 1 + 210
    diag = [l for l in (tmp_path / "diagnostics.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(diag) == 1 + 80


def test_sweep_rerun_identical(data_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["sweep", str(data_file), "--out", str(a), "--workers", "1"])
    main(["sweep", str(data_file), "--out", str(b), "--workers", "3"])
    assert _digest(a) == _digest(b)


def test_input_untouched(data_file, tmp_path):
    before = data_file.read_bytes()
    main(["cascade", str(data_file), "--step", "0.1", "--out", str(tmp_path / "grid.csv")])
    assert data_file.read_bytes() == before


def test_header_records_flags(data_file, tmp_path):
    out = tmp_path / "grid.csv"
    main(["cascade", str(data_file), "--step", "0.1", "--layout", "matrix", "--out", str(out)])
    first = out.read_text().splitlines()[0]
    assert first.startswith("# abstention-cascade ")
    flags = json.loads(first.split(" cascade ", 1)[1])
    assert flags["step"] == 0.1 and flags["layout"] == "matrix" and "workers" not in flags


def test_compare(data_file, tmp_path):
    out = tmp_path / "curves.csv"
    assert main(["compare", str(data_file), "--step", "0.1", "--out", str(out)]) == EXIT_OK
    body = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert body[0] == "family,abstention_fraction,fa_raw,fa_smoothed"
    assert {l.split(",")[0] for l in body[1:]} >= {"phone-only", "combined"}


def test_simulate_repeatable(data_file, tmp_path):
    args = ["simulate", str(data_file), "--phone-window", "0.2", "0.7", "--cloud-window", "0.3", "0.6"]
    main(args + ["--out", str(tmp_path / "a"), "--seed", "5"])
    main(args + ["--out", str(tmp_path / "b"), "--seed", "5"])
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_synth_repeatable(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for p in (a, b):
        assert main(["synth", "--out", str(p), "--n-images", "50", "--seed", "2"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert len(load_dataset(a)) == 50


def test_validate(data_file, capsys):
    assert main(["validate", str(data_file)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "records: 80" in out and out.rstrip().endswith("ok")


def test_strict_rejects_certain_confidence(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"image_id": "ok-1", "truth_count": 0, "stages": {"phone": []}}\n'
        '{"image_id": "edge-7", "truth_count": 1, "stages": {"phone": [{"c": 1.0}]}}\n'
    )
    assert main(["validate", str(path)]) == EXIT_OK
    capsys.readouterr()
    assert main(["validate", "--strict", str(path)]) == EXIT_DATA
    assert "edge-7" in capsys.readouterr().err


def test_unknown_subcommand():
    assert main(["frobnicate"]) == EXIT_USAGE


def test_bad_window_is_data_error(data_file, tmp_path):
    args = ["simulate", str(data_file), "--phone-window", "0.7", "0.2", "--cloud-window", "0.3", "0.6"]
    assert main(args + ["--out", str(tmp_path)]) == EXIT_DATA


def test_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "nope.jsonl")]) == EXIT_IO


def test_module_entry(data_file):
    proc = subprocess.run(
        [sys.executable, "-m", "abstention_cascade", "validate", str(data_file)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and "ok" in proc.stdout
