"""Synthetic data, dataset IO, training, metrics and the command line."""

from .config import SECTIONS, Config, config_from_dict, load_config
from .data import (
    BitemporalSample,
    Shape,
    SynthSpec,
    augment,
    dihedral,
    edit_masks,
    load_dataset,
    rasterize,
    save_dataset,
    synth_generate,
)
from .metrics import PALETTE, MetricsReport, color_counts, confusion, error_map, evaluate_metrics, report_from_counts
from .optim import Adam, TrainState, adam_step
from .predict import predict_export
from .train import RunConfig, TrainResult, evaluate_model, predict_logits, predict_masks, stack_batch, train_loop

__all__ = [
    "SECTIONS", "Config", "config_from_dict", "load_config",
    "BitemporalSample", "Shape", "SynthSpec", "augment", "dihedral", "edit_masks", "load_dataset", "rasterize",
    "save_dataset", "synth_generate",
    "PALETTE", "MetricsReport", "color_counts", "confusion", "error_map", "evaluate_metrics", "report_from_counts",
    "Adam", "TrainState", "adam_step", "predict_export",
    "RunConfig", "TrainResult", "evaluate_model", "predict_logits", "predict_masks", "stack_batch", "train_loop",
]
