"""Cross-temporal gating, the transformer-style base block, and the per-stage U-shaped interactor."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor_core import Conv2d, Module, ModuleList, Tensor, make_norm, ops

MixerFactory = Callable[[int], Module]


class DSConv(Module):
    """Depthwise 3x3 (optionally strided) followed by pointwise 1x1, both with bias."""

    def __init__(self, cin: int, cout: int, stride: int = 1, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.depthwise = Conv2d(cin, cin, 3, stride=stride, padding=1, groups=cin, rng=rng)
        self.pointwise = Conv2d(cin, cout, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))


class CTIBlock(Module):
    """Gates each temporal feature map by a sigmoid of itself concatenated with the difference map.

    ``difference="abs"`` uses ``|F1 - F2|``, which keeps the block exactly
    equivariant to swapping the two dates; ``"signed"`` uses ``F1 - F2``.
    """

    def __init__(self, channels: int, difference: str = "abs", rng: Optional[np.random.Generator] = None):
        super().__init__()
        if difference not in ("abs", "signed"):
            raise ConfigError(f"unknown difference mode {difference!r}")
        self.channels = channels
        self.difference = difference
        self.fuse = DSConv(2 * channels, channels, rng=rng)
        self.last: dict = {}

    def forward(self, f1: Tensor, f2: Tensor) -> tuple[Tensor, Tensor]:
        return cti_forward(f1, f2, self)


def cti_forward(f1: Tensor, f2: Tensor, block: CTIBlock) -> tuple[Tensor, Tensor]:
    if f1.shape != f2.shape:
        raise DimensionError(f"CTI inputs differ: {f1.shape} vs {f2.shape}")
    if f1.ndim != 4 or f1.shape[1] != block.channels:
        raise DimensionError(f"CTI for C={block.channels} got {f1.shape}")
    rc = ops.sub(f1, f2)
    if block.difference == "abs":
        rc = ops.absolute(rc)
    w1 = ops.sigmoid(block.fuse(ops.concat([f1, rc], axis=1)))
    w2 = ops.sigmoid(block.fuse(ops.concat([f2, rc], axis=1)))
    block.last = {"rc": rc.data, "w1": w1.data, "w2": w2.data}
    return ops.mul(w1, f1), ops.mul(w2, f2)


class ChannelMLP(Module):
    def __init__(self, channels: int, ratio: int = 2, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.fc1 = Conv2d(channels, channels * ratio, 1, rng=rng)
        self.fc2 = Conv2d(channels * ratio, channels, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class BaseBlock(Module):
    """``y = x + mixer(norm1(x))``; ``out = y + mlp(norm2(y))``."""

    def __init__(
        self,
        channels: int,
        mixer: Module,
        mlp_ratio: int = 2,
        norm: str = "group",
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.channels = channels
        self.norm1 = make_norm(norm, channels)
        self.mixer = mixer
        self.norm2 = make_norm(norm, channels)
        self.mlp = ChannelMLP(channels, mlp_ratio, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return base_block_forward(x, self)


def base_block_forward(x: Tensor, block: BaseBlock) -> Tensor:
    if x.ndim != 4 or x.shape[1] != block.channels:
        raise ConfigError(f"base block for C={block.channels} got input {x.shape}")
    y = ops.add(x, block.mixer(block.norm1(x)))
    return ops.add(y, block.mlp(block.norm2(y)))


def level_channels(stage_index: int, stage_channels: Sequence[int]) -> list[int]:
    """Channels at each internal level of stage ``s``: native width, then the rest of the list, then the last width.

    Stage ``s`` has ``5 - s`` downsamplings, hence ``6 - s`` levels.
    """
    depth = 5 - stage_index
    tail = list(stage_channels[stage_index - 1 :])
    tail += [stage_channels[-1]] * (depth + 1 - len(tail))
    return tail[: depth + 1]


class CSIStage(Module):
    """U-shaped per-stage extractor whose bottleneck (1/32 of the image) hosts a CTI block.

    Both temporal branches run through the same weights. Encoder level ``l``:
    base blocks then a stride-2 depthwise-separable downsample. Decoder level
    ``l``: bilinear 2x upsample, concat with the same-branch skip, 1x1 fuse
    conv, base blocks.
    """

    def __init__(
        self,
        stage_index: int,
        stage_channels: Sequence[int],
        mixer_factory: MixerFactory,
        mlp_ratio: int = 2,
        blocks_per_level: int = 1,
        cti_difference: str = "abs",
        norm: str = "group",
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        if not 1 <= stage_index <= 4:
            raise ConfigError(f"stage index must be in 1..4, got {stage_index}")
        self.stage_index = stage_index
        self.depth = 5 - stage_index
        self.channels = level_channels(stage_index, stage_channels)

        def blocks(c):
            return ModuleList(BaseBlock(c, mixer_factory(c), mlp_ratio, norm, rng=rng) for _ in range(blocks_per_level))

        ch = self.channels
        self.enc = ModuleList(blocks(ch[l]) for l in range(self.depth))
        self.down = ModuleList(DSConv(ch[l], ch[l + 1], stride=2, rng=rng) for l in range(self.depth))
        self.cti = CTIBlock(ch[-1], cti_difference, rng=rng)
        self.fuse = ModuleList(Conv2d(ch[l + 1] + ch[l], ch[l], 1, rng=rng) for l in range(self.depth))
        self.dec = ModuleList(blocks(ch[l]) for l in range(self.depth))
        self.bottom_shapes: list[tuple] = []

    @property
    def in_channels(self) -> int:
        return self.channels[0]

    def encode(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        skips = []
        for l in range(self.depth):
            for blk in self.enc[l]:
                x = blk(x)
            skips.append(x)
            x = self.down[l](x)
            expect = (skips[-1].shape[2] // 2, skips[-1].shape[3] // 2)
            assert x.shape[1] == self.channels[l + 1] and x.shape[2:] == expect, (l, x.shape)
        return skips, x

    def decode(self, x: Tensor, skips: list[Tensor]) -> Tensor:
        for l in reversed(range(self.depth)):
            skip = skips[l]
            up = ops.bilinear_resize(x, skip.shape[2], skip.shape[3])
            x = self.fuse[l](ops.concat([up, skip], axis=1))
            for blk in self.dec[l]:
                x = blk(x)
        return x

    def forward(self, f1: Tensor, f2: Tensor) -> tuple[Tensor, Tensor]:
        return csi_stage_forward(f1, f2, self)


def csi_stage_forward(f1: Tensor, f2: Tensor, stage: CSIStage) -> tuple[Tensor, Tensor]:
    if f1.shape != f2.shape:
        raise DimensionError(f"stage inputs differ: {f1.shape} vs {f2.shape}")
    if f1.ndim != 4 or f1.shape[1] != stage.in_channels:
        raise ConfigError(f"stage {stage.stage_index} expects {stage.in_channels} channels, got {f1.shape}")
    h, w = f1.shape[2:]
    k = 2**stage.depth
    if h % k or w % k:
        raise ConfigError(f"stage {stage.stage_index}: input {h}x{w} not divisible by 2^{stage.depth}")
    skips1, b1 = stage.encode(f1)
    skips2, b2 = stage.encode(f2)
    stage.bottom_shapes = [b1.shape, b2.shape]
    r1, r2 = stage.cti(b1, b2)
    return stage.decode(r1, skips1), stage.decode(r2, skips2)
