"""Seeded mini-batch training with validation, checkpointing and a CSV log."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, NumericError
from ..model import LossConfig, ModelConfig, STeInFormer, hybrid_components, save_weights
from ..tensor_core import Tensor, no_grad
from .data import BitemporalSample, augment, swap_dates
from .metrics import MetricsReport, evaluate_metrics
from .optim import Adam

log = logging.getLogger(__name__)

LOG_FIELDS = ["step", "epoch", "lr", "loss", "focal", "dice", "val_f1"]


@dataclass
class RunConfig:
    epochs: int = 10
    batch_size: int = 4
    lr: float = 1e-4
    weight_decay: float = 1e-5
    gamma: float = 0.94
    decay_every: int = 1
    seed: int = 0
    augment: bool = True
    swap_dates: bool = False
    out_dir: Optional[str] = None
    max_steps: Optional[int] = None
    time_budget_s: Optional[float] = None
    val_fraction: float = 0.2
    data_root: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    val: list = field(default_factory=list)
    best_f1: float = -1.0
    steps: int = 0
    seconds: float = 0.0
    best_path: Optional[Path] = None
    last_path: Optional[Path] = None


def stack_batch(samples: Sequence[BitemporalSample], dtype=np.float32) -> tuple[Tensor, Tensor, np.ndarray]:
    t1 = np.stack([s.t1 for s in samples]).astype(dtype)
    t2 = np.stack([s.t2 for s in samples]).astype(dtype)
    y = np.stack([s.label for s in samples]).astype(dtype)
    return Tensor(t1), Tensor(t2), y


def predict_logits(model: STeInFormer, samples: Sequence[BitemporalSample], batch_size: int = 8) -> np.ndarray:
    was_training = model.training
    model.eval()
    dtype = model.parameters()[0].dtype
    outs = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            t1, t2, _ = stack_batch(samples[i : i + batch_size], dtype)
            outs.append(model(t1, t2)[0].data)
    model.train(was_training)
    return np.concatenate(outs) if outs else np.zeros((0, 2, 0, 0))


def predict_masks(model: STeInFormer, samples: Sequence[BitemporalSample], batch_size: int = 8) -> np.ndarray:
    """Argmax change maps, N x H x W in {0, 1}."""
    return np.argmax(predict_logits(model, samples, batch_size), axis=1).astype(np.uint8)


def evaluate_model(model: STeInFormer, samples: Sequence[BitemporalSample], batch_size: int = 8) -> MetricsReport:
    preds = predict_masks(model, samples, batch_size)
    return evaluate_metrics(list(preds), [s.label for s in samples])


def train_loop(
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    train_set: Sequence[BitemporalSample],
    val_set: Sequence[BitemporalSample],
    run: RunConfig,
    model: Optional[STeInFormer] = None,
) -> tuple[STeInFormer, TrainResult]:
    """Trains ``model`` (built from ``model_cfg`` if not given) and returns it with the run record.

    With ``run.out_dir`` set, writes ``train_log.csv``, ``best.stein`` (highest
    validation F1) and ``last.stein``, each with a JSON sidecar.
    """
    if not train_set:
        raise ConfigError("training set is empty")
    if model is None:
        model = STeInFormer(model_cfg).to_dtype(np.float32)
    model.train()
    opt = Adam(model.parameters(), lr=run.lr, weight_decay=run.weight_decay, gamma=run.gamma, seed=run.seed,
               decay_every=run.decay_every)
    rng = np.random.default_rng(run.seed)
    out = Path(run.out_dir) if run.out_dir else None
    writer = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "train_log.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
    res = TrainResult()
    meta = {"model": model_cfg.to_dict(), "loss": asdict(loss_cfg), "run": asdict(run)}
    start = time.perf_counter()
    dtype = model.parameters()[0].dtype

    def out_of_budget():
        if run.max_steps is not None and opt.state.step >= run.max_steps:
            return True
        return run.time_budget_s is not None and time.perf_counter() - start >= run.time_budget_s

    try:
        for epoch in range(run.epochs):
            order = rng.permutation(len(train_set))
            for b in range(0, len(order), run.batch_size):
                batch = [train_set[i] for i in order[b : b + run.batch_size]]
                if run.augment:
                    batch = [augment(s, rng) for s in batch]
                if run.swap_dates:
                    batch = [swap_dates(s) if rng.random() < 0.5 else s for s in batch]
                t1, t2, y = stack_batch(batch, dtype)
                logits, _ = model(t1, t2)
                loss, f, d = hybrid_components(logits, y, loss_cfg)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss {value} at step {opt.state.step + 1} (epoch {epoch})")
                model.zero_grad()
                loss.backward()
                opt.step()
                row = {"step": opt.state.step, "epoch": epoch, "lr": opt.state.lr, "loss": value,
                       "focal": f, "dice": d, "val_f1": ""}
                res.history.append(row)
                if writer:
                    writer.writerow(row)
                if out_of_budget():
                    break
            if val_set:
                rep = evaluate_model(model, val_set)
                res.val.append(rep.f1)
                res.history[-1]["val_f1"] = rep.f1
                if writer:
                    writer.writerow({**res.history[-1]})
                log.info("epoch %d step %d loss %.4f val F1 %.4f", epoch, opt.state.step, value, rep.f1)
                if rep.f1 > opt.state.best_f1:
                    opt.state.best_f1 = rep.f1
                    if out:
                        res.best_path = save_weights(model, out / "best.stein", {**meta, "state": opt.state.scalars()})
            if out_of_budget():
                break
            opt.end_epoch()
    finally:
        if writer:
            fh.close()
    res.best_f1 = opt.state.best_f1
    res.steps = opt.state.step
    res.seconds = time.perf_counter() - start
    if out:
        res.last_path = save_weights(model, out / "last.stein", {**meta, "state": opt.state.scalars()})
    return model, res
