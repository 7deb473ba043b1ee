"""Confusion-count metrics for binary change maps, and the four-colour error map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

# white TP, black TN, red FP, green FN
PALETTE = {"tp": (255, 255, 255), "tn": (0, 0, 0), "fp": (255, 0, 0), "fn": (0, 255, 0)}


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    iou: float
    oa: float
    flags: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("tp", "fp", "fn", "tn", "precision", "recall", "f1", "iou", "oa", "flags")}

    def check(self) -> None:
        """Assert the defining identities; raises AssertionError on violation."""
        total = self.tp + self.fp + self.fn + self.tn
        assert total > 0
        assert abs(self.oa - (self.tp + self.tn) / total) < 1e-12
        if self.tp + self.fp + self.fn:
            assert abs(self.iou - self.tp / (self.tp + self.fp + self.fn)) < 1e-12
        if self.precision + self.recall > 0:
            f1 = 2 * self.precision * self.recall / (self.precision + self.recall)
            assert abs(self.f1 - f1) < 1e-12
        for k in ("precision", "recall", "f1", "iou", "oa"):
            assert 0.0 <= getattr(self, k) <= 1.0


def _binary(name: str, a) -> np.ndarray:
    a = np.asarray(a)
    if not np.all((a == 0) | (a == 1)):
        raise DataError(f"{name} must be binary 0/1")
    return a.astype(bool)


def confusion(pred, label) -> tuple[int, int, int, int]:
    p, y = _binary("predictions", pred), _binary("labels", label)
    if p.shape != y.shape:
        raise DataError(f"prediction shape {p.shape} does not match label shape {y.shape}")
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    return tp, fp, fn, int(p.size) - tp - fp - fn


def report_from_counts(tp: int, fp: int, fn: int, tn: int) -> MetricsReport:
    flags = []
    if tp + fp:
        pre = tp / (tp + fp)
    else:
        pre = 0.0
        flags.append("precision_undefined")
    if tp + fn:
        rec = tp / (tp + fn)
    else:
        rec = 0.0
        flags.append("recall_undefined")
    f1 = 2 * pre * rec / (pre + rec) if pre + rec > 0 else 0.0
    union = tp + fp + fn
    if union:
        iou = tp / union
    else:
        # empty prediction and empty label agree perfectly
        iou = 1.0
        flags.append("iou_empty")
    total = tp + fp + fn + tn
    oa = (tp + tn) / total if total else 0.0
    rep = MetricsReport(tp, fp, fn, tn, pre, rec, f1, iou, oa, flags)
    if total:
        rep.check()
    return rep


def evaluate_metrics(predictions, labels) -> MetricsReport:
    """Micro-averaged scores over every pixel of every sample."""
    if isinstance(predictions, np.ndarray) and isinstance(labels, np.ndarray):
        return report_from_counts(*confusion(predictions, labels))
    if len(predictions) != len(labels):
        raise DataError(f"{len(predictions)} predictions vs {len(labels)} labels")
    counts = np.zeros(4, dtype=np.int64)
    for p, y in zip(predictions, labels):
        counts += confusion(p, y)
    return report_from_counts(*(int(c) for c in counts))


def error_map(pred, label) -> np.ndarray:
    """H x W x 3 uint8 image coloured by confusion category."""
    p, y = _binary("prediction", pred), _binary("label", label)
    out = np.zeros(p.shape + (3,), dtype=np.uint8)
    out[p & y] = PALETTE["tp"]
    out[p & ~y] = PALETTE["fp"]
    out[~p & y] = PALETTE["fn"]
    return out


def color_counts(img: np.ndarray) -> dict:
    """Pixels per palette category in an error-map image."""
    flat = img.reshape(-1, 3)
    return {k: int(np.count_nonzero(np.all(flat == np.array(c), axis=1))) for k, c in PALETTE.items()}
