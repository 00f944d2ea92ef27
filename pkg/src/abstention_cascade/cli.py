"""Command-line entry point: ``abstention-cascade <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 invalid data or parameters, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .alerts import AlertLevel
from .cascade import combined_grid, comparison_curves, export_curves, export_grid
from .dataset import CLOUD, PHONE, Dataset, DatasetError, class_counts, load_dataset, save_dataset
from .deploysim import (
    default_latency_model,
    export_latencies,
    export_summary,
    load_latency_model,
    simulate,
)
from .sweep import (
    HEATMAP_METRICS,
    evaluate_window,
    export_candidates,
    export_heatmap,
    make_grid,
    sweep_stage,
)
from .synth import SynthConfig, generate_synthetic, reference_count_weights
from .window import Window, diagnose_stage, diagnostics_csv

log = logging.getLogger("abstention_cascade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 2, 3, 4

# Flags that do not influence results stay out of output headers.
_UNECHOED = {"workers", "out", "func", "command", "verbose"}


def _header(args: argparse.Namespace, dataset: Optional[Dataset] = None) -> list[str]:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in _UNECHOED}
    lines = [f"abstention-cascade {__version__} {args.command} {json.dumps(flags, sort_keys=True)}"]
    if dataset is not None:
        lines.append(f"dataset meta {json.dumps(dict(dataset.metadata), sort_keys=True)}")
    return lines


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _load(args) -> Dataset:
    return load_dataset(args.dataset, strict=args.strict)


def _grid(args, prefix: str = ""):
    step = getattr(args, f"{prefix}step") or args.step
    return make_grid(step, args.min, args.max)


def cmd_validate(args) -> int:
    ds = _load(args)
    counts = class_counts(ds)
    n_boxes = {
        s: sum(len(r.stage_detections[s]) for r in ds.records) for s in sorted(ds.stages())
    }
    print(f"records: {len(ds)}")
    print(f"stages: {', '.join(sorted(ds.stages()))}")
    for level in AlertLevel:
        print(f"{level.label}: {counts[level]}")
    for s, n in n_boxes.items():
        print(f"boxes[{s}]: {n}")
    if ds.metadata:
        print(f"meta: {json.dumps(dict(ds.metadata), sort_keys=True)}")
    print("ok")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = SynthConfig(
        n_images=args.n_images,
        count_weights=reference_count_weights(args.max_count),
        seed=args.seed,
    )
    ds = generate_synthetic(config)
    meta = dict(ds.metadata)
    meta["generator"] = _header(args)[0]
    save_dataset(Dataset(ds.records, meta), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    ds = _load(args)
    grid = _grid(args)
    candidates = sweep_stage(ds, args.stage, grid, workers=args.workers)
    header = _header(args, ds)
    out = Path(args.out)
    _write(out / "candidates.csv", export_candidates(candidates, header))
    for metric in HEATMAP_METRICS:
        _write(out / f"heatmap_{metric}.csv", export_heatmap(candidates, metric, header))
    if args.window:
        rows = diagnose_stage(ds, args.stage, Window(*args.window))
        _write(out / "diagnostics.csv", diagnostics_csv(rows, header))
    return EXIT_OK


def cmd_cascade(args) -> int:
    ds = _load(args)
    cells = combined_grid(
        ds, _grid(args, "phone_"), _grid(args, "cloud_"), bucket=args.bucket, workers=args.workers
    )
    _write(Path(args.out), export_grid(cells, args.layout, _header(args, ds)))
    return EXIT_OK


def cmd_compare(args) -> int:
    ds = _load(args)
    curves = comparison_curves(
        ds,
        _grid(args, "phone_"),
        _grid(args, "cloud_"),
        smooth_width=args.smooth_width,
        include_human=not args.exclude_human,
        workers=args.workers,
    )
    _write(Path(args.out), export_curves(curves, _header(args, ds)))
    return EXIT_OK


def cmd_simulate(args) -> int:
    ds = _load(args)
    model = load_latency_model(args.config) if args.config else default_latency_model()
    phone = evaluate_window(ds, PHONE, Window(*args.phone_window))
    rows = phone.abstained_rows
    cloud = evaluate_window(ds, CLOUD, Window(*args.cloud_window), rows=rows) if rows.size else None
    report = simulate(ds, phone, cloud, model, seed=args.seed)
    header = _header(args, ds)
    out = Path(args.out)
    _write(out / "latencies.csv", export_latencies(report, header))
    _write(out / "summary.csv", export_summary(report, header))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abstention-cascade", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_cmd(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("dataset", help="line-delimited detection record file")
        sp.add_argument("--strict", action="store_true", help="reject confidences of exactly 0 or 1")
        sp.set_defaults(func=func)
        return sp

    def grid_flags(sp, per_stage=False):
        sp.add_argument("--step", type=float, default=0.05)
        sp.add_argument("--min", type=float, default=0.0)
        sp.add_argument("--max", type=float, default=0.95)
        if per_stage:
            sp.add_argument("--phone-step", type=float, default=None)
            sp.add_argument("--cloud-step", type=float, default=None)
        sp.add_argument("--workers", type=int, default=1)

    data_cmd("validate", cmd_validate, "check a dataset file and print a summary")

    sp = sub.add_parser("synth", help="write a seeded synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-images", type=int, default=2000)
    sp.add_argument("--max-count", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = data_cmd("sweep", cmd_sweep, "threshold-window sweep for one stage")
    sp.add_argument("--stage", default=PHONE)
    grid_flags(sp)
    sp.add_argument("--window", type=float, nargs=2, metavar=("LOWER", "UPPER"),
                    help="also write per-image diagnostics for this window")
    sp.add_argument("--out", required=True, help="output directory")

    sp = data_cmd("cascade", cmd_cascade, "combined phone/cloud/human MCC grid")
    grid_flags(sp, per_stage=True)
    sp.add_argument("--bucket", type=float, default=0.05)
    sp.add_argument("--layout", choices=("long", "matrix"), default="long")
    sp.add_argument("--out", required=True)

    sp = data_cmd("compare", cmd_compare, "false-alarm comparison curves")
    grid_flags(sp, per_stage=True)
    sp.add_argument("--smooth-width", type=float, default=0.05)
    sp.add_argument("--exclude-human", action="store_true",
                    help="drop human-reviewed images from the combined FA denominator")
    sp.add_argument("--out", required=True)

    sp = data_cmd("simulate", cmd_simulate, "deployment latency simulation")
    sp.add_argument("--phone-window", type=float, nargs=2, required=True, metavar=("LOWER", "UPPER"))
    sp.add_argument("--cloud-window", type=float, nargs=2, required=True, metavar=("LOWER", "UPPER"))
    sp.add_argument("--config", help="latency model INI file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output directory")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
