"""Focal + soft-dice objective on the changed-class softmax probability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from ..tensor_core import Tensor, ops

CLAMP = 1e-7


@dataclass
class LossConfig:
    lambda_focal: float = 1.0
    lambda_dice: float = 1.0
    alpha: float = 0.25
    gamma: float = 2.0
    eps: float = 1.0

    def __post_init__(self):
        if self.lambda_focal < 0 or self.lambda_dice < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.gamma < 0:
            raise ConfigError(f"focal gamma must be >= 0, got {self.gamma}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"focal alpha must be in (0, 1], got {self.alpha}")
        if self.eps <= 0:
            raise ConfigError(f"dice eps must be > 0, got {self.eps}")


def _prepare(logits: Tensor, labels) -> tuple[Tensor, Tensor]:
    """Changed-class probability (N x 1 x H x W) and the labels as a constant tensor of the same shape."""
    if logits.ndim != 4 or logits.shape[1] != 2:
        raise ConfigError(f"logits must be N x 2 x H x W, got {logits.shape}")
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels)
    n, _, h, w = logits.shape
    if y.size != n * h * w:
        raise ConfigError(f"labels of shape {y.shape} do not match logits {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        bad = np.unique(y[(y != 0) & (y != 1)])[:5]
        raise DataError(f"labels must be binary 0/1, found {bad.tolist()}")
    prob = ops.split(ops.softmax(logits, axis=1), [1, 1], axis=1)[1]
    return prob, Tensor(y.reshape(n, 1, h, w).astype(logits.dtype))


def _focal(prob: Tensor, y: Tensor, cfg: LossConfig) -> Tensor:
    one_minus = lambda t: ops.shift(ops.scale(t, -1.0), 1.0)  # noqa: E731
    p_hat = ops.add(ops.mul(y, prob), ops.mul(one_minus(y), one_minus(prob)))
    p_hat = ops.clamp(p_hat, CLAMP, 1.0 - CLAMP)
    log_p = ops.log(p_hat)
    if cfg.gamma == 0:
        terms = log_p
    else:
        terms = ops.mul(ops.power(one_minus(p_hat), cfg.gamma), log_p)
    return ops.scale(ops.mean_all(terms), -cfg.alpha)


def _dice(prob: Tensor, y: Tensor, cfg: LossConfig) -> Tensor:
    inter = ops.sum_all(ops.mul(y, prob))
    num = ops.shift(ops.scale(inter, 2.0), cfg.eps)
    den = ops.shift(ops.add(ops.sum_all(y), ops.sum_all(prob)), cfg.eps)
    return ops.shift(ops.scale(ops.div(num, den), -1.0), 1.0)


def focal_loss(logits: Tensor, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    prob, y = _prepare(logits, labels)
    return _focal(prob, y, cfg)


def dice_loss(logits: Tensor, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    prob, y = _prepare(logits, labels)
    return _dice(prob, y, cfg)


def hybrid_loss(logits: Tensor, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    prob, y = _prepare(logits, labels)
    return ops.add(ops.scale(_focal(prob, y, cfg), cfg.lambda_focal), ops.scale(_dice(prob, y, cfg), cfg.lambda_dice))


def hybrid_components(logits: Tensor, labels, cfg: LossConfig = LossConfig()) -> tuple[Tensor, float, float]:
    """Weighted total plus the unweighted focal and dice values, for logging."""
    prob, y = _prepare(logits, labels)
    f, d = _focal(prob, y, cfg), _dice(prob, y, cfg)
    total = ops.add(ops.scale(f, cfg.lambda_focal), ops.scale(d, cfg.lambda_dice))
    return total, float(f.data), float(d.data)
