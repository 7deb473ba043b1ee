"""Module containers and the two learnable layer types the model is built from."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from ..errors import ConfigError
from . import ops
from .ops import ConvSpec
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Base class with attribute-based registration of parameters, buffers and children.

    Assigning a :class:`Parameter` or :class:`Module` to an attribute
    registers it under that name; lists of modules go through :class:`ModuleList`.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for cname, child in self._children.items():
            yield from child.named_modules(prefix + cname + ".")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        params = dict(self.named_parameters())
        for name, value in state.items():
            if own[name].shape != np.shape(value):
                raise ConfigError(f"state entry {name}: shape {np.shape(value)} vs {own[name].shape}")
            if name in params:
                params[name].data = np.array(value, dtype=params[name].dtype)
            else:
                own[name][...] = value

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def to_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for _, m in self.named_modules():
            for name in list(m._buffers):
                m.register_buffer(name, getattr(m, name).astype(dtype))
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


# Hooks that observe every conv call; used by the FLOP tracer.
_CONV_OBSERVERS: list = []


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to ``[-2 std, 2 std]`` by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size=1,
        stride: int = 1,
        padding=0,
        groups: int = 1,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        if in_channels % groups or out_channels % groups:
            raise ConfigError(f"groups={groups} must divide in={in_channels} and out={out_channels}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.spec = ConvSpec(kh, kw, stride, padding, groups, bias)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(trunc_normal(rng, (out_channels, in_channels // groups, kh, kw)))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.conv2d(x, self.weight, self.bias, self.spec)
        for obs in _CONV_OBSERVERS:
            obs(self, x.shape, out.shape)
        return out

    def macs(self, out_h: int, out_w: int) -> int:
        s = self.spec
        return out_h * out_w * self.out_channels * (self.in_channels // s.groups) * s.kernel_h * s.kernel_w


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ConfigError(f"BatchNorm2d({self.channels}) got input {x.shape}")
        return ops.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class GroupNorm(Module):
    """Per-sample normalization; ``groups=1`` normalizes over all channels and pixels."""

    def __init__(self, channels: int, groups: int = 1, eps: float = 1e-5):
        super().__init__()
        if channels % groups:
            raise ConfigError(f"GroupNorm: {groups} groups do not divide {channels} channels")
        self.channels, self.groups, self.eps = channels, groups, eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ConfigError(f"GroupNorm({self.channels}) got input {x.shape}")
        return ops.group_norm(x, self.weight, self.bias, self.groups, self.eps)


NORMS = ("batch", "group")


def make_norm(kind: str, channels: int) -> Module:
    if kind == "batch":
        return BatchNorm2d(channels)
    if kind == "group":
        return GroupNorm(channels, 1)
    raise ConfigError(f"unknown norm {kind!r}; choose from {NORMS}")
