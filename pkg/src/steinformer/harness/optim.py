"""Adam with decoupled weight decay and a per-epoch multiplicative learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, TrainingError
from ..tensor_core import Parameter


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    lr: float = 1e-4
    seed: int = 0
    best_f1: float = -1.0
    m: list = field(default_factory=list, repr=False)
    v: list = field(default_factory=list, repr=False)

    def scalars(self) -> dict:
        return {"step": self.step, "epoch": self.epoch, "lr": self.lr, "seed": self.seed, "best_f1": self.best_f1}


class Adam:
    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-4,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
        gamma: float = 0.94,
        seed: int = 0,
        decay_every: int = 1,
    ):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not 0 < gamma <= 1:
            raise ConfigError(f"lr decay gamma must be in (0, 1], got {gamma}")
        if decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1 epoch, got {decay_every}")
        self.decay_every = decay_every
        self.params = list(params)
        self.base_lr = lr
        self.betas, self.eps, self.weight_decay, self.gamma = betas, eps, weight_decay, gamma
        self.state = TrainState(lr=lr, seed=seed)
        self.state.m = [np.zeros_like(p.data) for p in self.params]
        self.state.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        adam_step(self)

    def end_epoch(self) -> float:
        """Multi-step decay: one factor of ``gamma`` per ``decay_every`` completed epochs."""
        st = self.state
        st.epoch += 1
        st.lr = self.base_lr * self.gamma ** (st.epoch // self.decay_every)
        return st.lr


def adam_step(opt: Adam) -> None:
    st = opt.state
    b1, b2 = opt.betas
    st.step += 1
    t = st.step
    c1, c2 = 1 - b1**t, 1 - b2**t
    for i, p in enumerate(opt.params):
        g = p.grad
        if g is None:
            raise TrainingError(f"parameter #{i} {tuple(p.shape)} has no gradient at step {t}")
        m, v = st.m[i], st.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if opt.weight_decay:
            p.data *= 1 - st.lr * opt.weight_decay
        p.data -= (st.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)).astype(p.dtype, copy=False)
