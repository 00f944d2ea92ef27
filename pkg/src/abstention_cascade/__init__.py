"""Multistage abstention cascades over object-detection counts."""

__version__ = "0.1.0"

from .alerts import AlertLevel, alert_of_count
from .cascade import (
    CascadeCell,
    CombinedResult,
    ComparisonCurve,
    combined_evaluate,
    combined_grid,
    comparison_curves,
    conditioned_cloud_candidates,
    export_curves,
    export_grid,
)
from .dataset import (
    Dataset,
    DatasetError,
    DetectionBox,
    ImageRecord,
    class_counts,
    load_dataset,
    save_dataset,
    truth_alert,
)
from .deploysim import LatencyModel, SimReport, default_latency_model, fit_cloud_defaults, simulate
from .metrics import ConfusionMatrix, MetricReport, abstention_fraction, confusion, false_alarm_fraction, mcc
from .sweep import Candidate, Grid, export_heatmap, group_best_by_abstention, make_grid, sweep_stage
from .synth import SynthConfig, generate_synthetic
from .window import Decision, Partition, Window, decide, partition, predict_stage
