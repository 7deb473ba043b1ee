"""Change-map and error-map PNG export."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..model import STeInFormer
from .data import BitemporalSample
from .metrics import error_map, evaluate_metrics
from .train import predict_masks


def predict_export(model: STeInFormer, sample: BitemporalSample, out_dir) -> dict:
    """Writes ``<id>_pred.png`` (0/255 gray) and, when the sample has a label, ``<id>_error.png``.

    Returns the written paths and, with a label, the sample's metrics.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred = predict_masks(model, [sample])[0]
    name = sample.id or "sample"
    result = {"pred": out_dir / f"{name}_pred.png"}
    Image.fromarray((pred * 255).astype(np.uint8), "L").save(result["pred"])
    if sample.label is not None:
        result["error"] = out_dir / f"{name}_error.png"
        Image.fromarray(error_map(pred, sample.label), "RGB").save(result["error"])
        result["metrics"] = evaluate_metrics(pred, sample.label)
    return result
