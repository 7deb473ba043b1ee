"""2-D DCT bases, frequency selection, and the multi-frequency token mixer.

The mixer projects its input with a 1x1 conv, splits the result into ``M``
channel groups, filters group ``i`` depthwise with the fixed DCT basis kernel
``B[u_i, v_i]`` (stride 1, zero padding ``p // 2``), concatenates the groups
and projects back with a second 1x1 conv. The basis kernels are constants: they
add no parameters and receive no gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .tensor_core import Conv2d, ConvSpec, Module, Tensor, ops
from .tensor_core import nn as _nn

STRATEGIES = ("pretrained_priors", "random_selection", "dynamic_assignment")


@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal 1-D DCT-II matrix: ``C[u, x] = a_u cos(pi (2x + 1) u / 2n)``."""
    if n < 1:
        raise ConfigError(f"DCT size must be positive, got {n}")
    x = np.arange(n)
    u = np.arange(n)[:, None]
    c = np.cos(np.pi * (2 * x + 1) * u / (2 * n)) * math.sqrt(2.0 / n)
    c[0] = 1.0 / math.sqrt(n)
    c.setflags(write=False)
    return c


def dct_basis(p: int, u: int, v: int) -> np.ndarray:
    """The ``p x p`` basis kernel for frequency ``(u, v)``; entry ``[x, y]`` is spatial."""
    if not (0 <= u < p and 0 <= v < p):
        raise ConfigError(f"frequency ({u}, {v}) outside [0, {p})^2")
    c = dct_matrix(p)
    return np.outer(c[u], c[v])


def dct2(a) -> np.ndarray:
    """2-D DCT of the last two axes: ``f[x, y] = sum_{h,w} A[h, w] B^{x,y}[h, w]``."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    h, w = a.shape[-2:]
    return dct_matrix(h) @ a @ dct_matrix(w).T


def idct2(f) -> np.ndarray:
    """Inverse of :func:`dct2`: ``A[h, w] = sum_{x,y} f[x, y] B^{x,y}[h, w]``."""
    f = np.asarray(f.data if isinstance(f, Tensor) else f, dtype=np.float64)
    h, w = f.shape[-2:]
    return dct_matrix(h).T @ f @ dct_matrix(w)


def zigzag_order(p: int) -> list[tuple[int, int]]:
    """JPEG-style low-to-high traversal of a ``p x p`` grid starting at (0, 0)."""
    order = []
    for s in range(2 * p - 1):
        diag = [(u, s - u) for u in range(p) if 0 <= s - u < p]
        order.extend(diag if s % 2 else diag[::-1])
    return order


def load_priority_list(path: Optional[str | Path] = None) -> list[tuple[int, int]]:
    """Read ``u v`` rows (highest priority first); ``#`` starts a comment."""
    if path is None:
        text = resources.files("steinformer").joinpath("data/frequency_priority.txt").read_text()
    else:
        text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"priority list line {lineno}: expected 'u v', got {line!r}")
        rows.append((int(parts[0]), int(parts[1])))
    return rows


@dataclass(frozen=True)
class FrequencySpec:
    strategy: str
    p: int
    indices: tuple
    seed: Optional[int] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown frequency strategy {self.strategy!r}")
        idx = tuple((int(u), int(v)) for u, v in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(set(idx)) != len(idx):
            raise ConfigError(f"duplicate frequency indices {idx}")
        for u, v in idx:
            if not (0 <= u < self.p and 0 <= v < self.p):
                raise ConfigError(f"frequency ({u}, {v}) outside [0, {self.p})^2")
        if self.strategy == "random_selection" and (0, 0) not in idx:
            raise ConfigError("random selection must keep the DC frequency (0, 0)")

    @property
    def M(self) -> int:
        return len(self.indices)


def select_frequencies(
    strategy: str,
    M: int,
    p: int,
    seed: Optional[int] = None,
    importance: Optional[np.ndarray] = None,
    priority: Optional[Sequence[tuple[int, int]]] = None,
) -> FrequencySpec:
    """Choose ``M`` DCT frequencies on a ``p x p`` grid.

    * ``pretrained_priors``: the first ``M`` entries of the built-in priority
      list (entries outside the grid dropped), continued in zigzag order when
      the list runs out.
    * ``random_selection``: ``(0, 0)`` plus ``M - 1`` distinct uniform draws.
    * ``dynamic_assignment``: the ``M`` cells of ``importance`` with the largest
      weight, ties broken by lexicographic ``(u, v)``.
    """
    if not 1 <= M <= p * p:
        raise ConfigError(f"M={M} must lie in [1, {p * p}] for p={p}")
    if strategy == "pretrained_priors":
        ranked = [(u, v) for u, v in (priority if priority is not None else load_priority_list()) if u < p and v < p]
        for cell in zigzag_order(p):
            if cell not in ranked:
                ranked.append(cell)
        return FrequencySpec(strategy, p, tuple(ranked[:M]))
    if strategy == "random_selection":
        rng = np.random.default_rng(seed)
        rest = [(u, v) for u in range(p) for v in range(p) if (u, v) != (0, 0)]
        picks = rng.choice(len(rest), size=M - 1, replace=False) if M > 1 else []
        return FrequencySpec(strategy, p, ((0, 0),) + tuple(rest[i] for i in picks), seed)
    if strategy == "dynamic_assignment":
        if importance is None:
            raise UsageError("dynamic_assignment needs an importance map")
        imp = np.asarray(importance, dtype=np.float64).reshape(p, p)
        cells = sorted(((u, v) for u in range(p) for v in range(p)), key=lambda c: (-imp[c], c))
        return FrequencySpec(strategy, p, tuple(cells[:M]))
    raise ConfigError(f"unknown frequency strategy {strategy!r}")


@dataclass
class MixerConfig:
    channels: int
    heads: int = 8
    p: int = 7
    spec: Optional[FrequencySpec] = None
    # width of the first projection relative to ``channels``
    expansion: int = 1
    strategy: str = field(default="pretrained_priors")
    seed: Optional[int] = None

    def __post_init__(self):
        if self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} not divisible by heads M={self.heads}")
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")
        if self.spec is not None:
            if self.spec.M != self.heads or self.spec.p != self.p:
                raise ConfigError(f"frequency spec (M={self.spec.M}, p={self.spec.p}) disagrees with mixer config")
            self.strategy = self.spec.strategy
        elif self.strategy != "dynamic_assignment":
            self.spec = select_frequencies(self.strategy, self.heads, self.p, seed=self.seed)

    @property
    def hidden(self) -> int:
        return self.channels * self.expansion


def band_matrix(kernel: np.ndarray, n: int) -> np.ndarray:
    """``(n, n)`` matrix of 1-D cross-correlation with ``kernel`` under zero padding ``len(kernel) // 2``."""
    p = len(kernel)
    half = p // 2
    m = np.zeros((n, n))
    for i in range(n):
        for t in range(p):
            j = i + t - half
            if 0 <= j < n:
                m[i, j] = kernel[t]
    return m


class DctFilter(Module):
    """Fixed depthwise filter bank: channel ``c`` is correlated with ``B[u_c, v_c]``.

    The basis is separable (``B = outer(c_u, c_v)``), so each run of channels
    sharing a frequency is filtered as ``A_u @ X @ A_v.T`` with banded
    matrices; the result equals the ``p x p`` depthwise convolution with zero
    padding ``p // 2``.
    """

    def __init__(self, channel_freqs: Sequence[tuple[int, int]], p: int):
        super().__init__()
        self.p = p
        self.channels = len(channel_freqs)
        self.set_frequencies(channel_freqs)

    def set_frequencies(self, channel_freqs: Sequence[tuple[int, int]]) -> None:
        freqs = [tuple(f) for f in channel_freqs]
        if len(freqs) != self.channels:
            raise ConfigError(f"DctFilter has {self.channels} channels, got {len(freqs)} frequencies")
        # contiguous equal-length runs share one pair of band matrices
        runs = [freqs[0]]
        for f in freqs[1:]:
            if f != runs[-1]:
                runs.append(f)
        if self.channels % len(runs) or [f for f in runs for _ in range(self.channels // len(runs))] != freqs:
            runs = freqs
        self.freqs = freqs
        self.groups = runs
        self._bands: dict = {}

    def kernels(self) -> np.ndarray:
        """The equivalent ``(C, 1, p, p)`` depthwise weight."""
        c = dct_matrix(self.p)
        return np.stack([np.outer(c[u], c[v]) for u, v in self.freqs])[:, None]

    def _matrices(self, h: int, w: int):
        key = (h, w)
        if key not in self._bands:
            c = dct_matrix(self.p)
            left = np.stack([band_matrix(c[u], h) for u, _ in self.groups])
            right = np.stack([band_matrix(c[v], w) for _, v in self.groups])
            self._bands[key] = (left, right)
        return self._bands[key]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ConfigError(f"DctFilter for C={self.channels} got input {x.shape}")
        left, right = self._matrices(x.shape[2], x.shape[3])
        y = ops.grouped_sandwich(x, left, right)
        for obs in _nn._CONV_OBSERVERS:
            obs(self, x.shape, y.shape)
        return y

    def macs(self, out_h: int, out_w: int) -> int:
        # counted as the p x p depthwise convolution it implements
        return out_h * out_w * self.channels * self.p * self.p


def _head_channels(hidden: int, indices: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    per = hidden // len(indices)
    return [f for f in indices for _ in range(per)]


class MultiFrequencyMixer(Module):
    def __init__(self, cfg: MixerConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if cfg.spec is None:
            raise ConfigError("MultiFrequencyMixer needs a fixed frequency spec; use DynamicFrequencyMixer")
        self.cfg = cfg
        self.proj_in = Conv2d(cfg.channels, cfg.hidden, 1, rng=rng)
        self.filter = DctFilter(_head_channels(cfg.hidden, cfg.spec.indices), cfg.p)
        self.proj_out = Conv2d(cfg.hidden, cfg.channels, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return mfm_forward(x, self)


def mfm_forward(x: Tensor, mixer: MultiFrequencyMixer) -> Tensor:
    if x.ndim != 4 or x.shape[1] != mixer.cfg.channels:
        raise ConfigError(f"mixer for C={mixer.cfg.channels} got input {x.shape}")
    return mixer.proj_out(mixer.filter(mixer.proj_in(x)))


class FrequencyScorer(Module):
    """Learned importance map over the ``p x p`` frequency grid.

    The channel-mean of the projected features is filtered with all ``p^2``
    basis kernels; the mean absolute response per frequency forms a spectral
    map, which a 3x3 conv and a sigmoid turn into weights in (0, 1).
    """

    def __init__(self, p: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.p = p
        bank = np.stack([dct_basis(p, u, v) for u in range(p) for v in range(p)])
        self._bank = bank.reshape(p * p, 1, p, p)
        self.conv = Conv2d(1, 1, 3, padding=1, rng=rng)
        # start near sigmoid(0) = 0.5 but let the spectral map decide the ranking
        self.conv.weight.data[...] = 0.0
        self.conv.weight.data[0, 0, 1, 1] = 1.0

    def forward(self, a: Tensor) -> Tensor:
        n, c, h, w = a.shape
        p = self.p
        m = ops.reshape(ops.mean_axes(a, [1]), (n, 1, h, w))
        bank = Tensor(self._bank.astype(a.dtype))
        resp = ops.conv2d(m, bank, None, ConvSpec(p, p, 1, p // 2, 1, False))
        for obs in _nn._CONV_OBSERVERS:
            obs(_BankProxy(p), m.shape, resp.shape)
        spec_map = ops.reshape(ops.mean_axes(ops.absolute(resp), [0, 2, 3]), (1, 1, p, p))
        return ops.sigmoid(self.conv(spec_map))


class _BankProxy:
    """Ledger stand-in for the fixed ``1 -> p^2`` analysis filter bank."""

    def __init__(self, p: int):
        self.p = p

    def macs(self, out_h: int, out_w: int) -> int:
        return out_h * out_w * self.p**4


class DynamicFrequencyMixer(Module):
    """Mixer whose frequencies are re-selected from a learned score map on every call.

    Head ``i``'s filtered output is scaled by its score so the scorer receives
    gradient through the selection.
    """

    def __init__(self, cfg: MixerConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.cfg = cfg
        self.proj_in = Conv2d(cfg.channels, cfg.hidden, 1, rng=rng)
        self.scorer = FrequencyScorer(cfg.p, rng=rng)
        self.filter = DctFilter(_head_channels(cfg.hidden, zigzag_order(cfg.p)[: cfg.heads]), cfg.p)
        self.proj_out = Conv2d(cfg.hidden, cfg.channels, 1, rng=rng)
        self.last_spec: Optional[FrequencySpec] = None

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.channels:
            raise ConfigError(f"mixer for C={cfg.channels} got input {x.shape}")
        a = self.proj_in(x)
        weights = self.scorer(a)
        spec = select_frequencies("dynamic_assignment", cfg.heads, cfg.p, importance=weights.data)
        self.last_spec = spec
        self.filter.set_frequencies(_head_channels(cfg.hidden, spec.indices))
        filtered = self.filter(a)
        per = cfg.hidden // cfg.heads
        heads = ops.split(filtered, [per] * cfg.heads, axis=1)
        gains = ops.take(weights, [u * cfg.p + v for u, v in spec.indices])
        scaled = [ops.mul(hd, g) for hd, g in zip(heads, ops.split(gains, [1] * cfg.heads, axis=0))]
        return self.proj_out(ops.concat(scaled, axis=1))


class ConvMixer(Module):
    """Plain 3x3 convolution token mixer (ablation baseline)."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(channels, channels, 3, padding=1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


def build_mixer(kind: str, cfg: MixerConfig, rng: Optional[np.random.Generator] = None) -> Module:
    if kind == "conv":
        return ConvMixer(cfg.channels, rng=rng)
    if kind != "dct":
        raise ConfigError(f"unknown mixer kind {kind!r}")
    if cfg.strategy == "dynamic_assignment":
        return DynamicFrequencyMixer(cfg, rng=rng)
    return MultiFrequencyMixer(cfg, rng=rng)


def mixer_param_count(channels: int, expansion: int = 1) -> int:
    """Learnable scalars of a fixed-frequency mixer: two 1x1 projections with bias."""
    hidden = channels * expansion
    return 2 * channels * hidden + hidden + channels


def dct_self_check(sizes=(2, 3, 4, 7, 8, 16), p: int = 7, seed: int = 0) -> list[tuple[str, float, bool]]:
    """Numerical checks of the transform: ``(name, worst error, passed)`` per check."""
    rng = np.random.default_rng(seed)
    out = []
    bank = np.stack([dct_basis(p, u, v).ravel() for u in range(p) for v in range(p)])
    err = float(np.abs(bank @ bank.T - np.eye(p * p)).max())
    out.append((f"basis gram identity p={p}", err, err < 1e-9))
    for n in sizes:
        a = rng.normal(size=(n, n + 1))
        f = dct2(a)
        rt = float(np.abs(idct2(f) - a).max())
        pv = abs(float(np.sum(a * a) - np.sum(f * f)))
        out.append((f"round trip {n}x{n + 1}", rt, rt < 1e-9))
        out.append((f"parseval {n}x{n + 1}", pv, pv < 1e-9))
        c = float(rng.uniform(-2, 2))
        const = dct2(np.full((n, n), c))
        # a constant image has only the DC term, equal to c * sqrt(H W)
        expect = np.zeros((n, n))
        expect[0, 0] = c * n
        ce = float(np.abs(const - expect).max())
        out.append((f"constant spectrum {n}x{n}", ce, ce < 1e-12))
    return out


__all__ = [
    "STRATEGIES",
    "ConvMixer",
    "DctFilter",
    "DynamicFrequencyMixer",
    "FrequencyScorer",
    "FrequencySpec",
    "MixerConfig",
    "MultiFrequencyMixer",
    "build_mixer",
    "dct2",
    "dct_basis",
    "dct_matrix",
    "dct_self_check",
    "idct2",
    "load_priority_list",
    "mfm_forward",
    "mixer_param_count",
    "select_frequencies",
    "zigzag_order",
]
