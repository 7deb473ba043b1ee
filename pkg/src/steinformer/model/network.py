"""Full bi-temporal change detector: shared patch embedding, four interacting stages, and the MLP decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, UsageError
from ..interactors import CSIStage
from ..spectral import STRATEGIES, MixerConfig, build_mixer
from ..tensor_core import NORMS, Conv2d, Module, ModuleList, Tensor, make_norm, ops
from ..tensor_core.nn import trunc_normal


INITS = ("lecun", "trunc_normal")
DECODER_ACTS = ("gelu", "none")


@dataclass
class ModelConfig:
    stage_channels: tuple = (32, 48, 64, 96)
    blocks_per_level: int = 1
    mlp_ratio: int = 2
    mixer_heads: int = 8  # M
    mixer_p: int = 7
    strategy: str = "pretrained_priors"
    mixer_kind: str = "dct"  # "dct" or "conv"
    # first mixer projection widens C -> expansion * C
    mixer_expansion: int = 3
    frequency_seed: int = 0
    cti_difference: str = "abs"
    norm: str = "group"
    decoder_channels: int = 32
    decoder_act: str = "gelu"
    num_classes: int = 2
    image_size: tuple = (256, 256)
    init_seed: int = 0
    # "lecun": truncated normal with std 1/sqrt(fan_in); "trunc_normal": fixed std 0.02
    init: str = "lecun"
    # multiplies the start weights of the last layer in each residual branch
    residual_init_scale: float = 0.1

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.image_size = tuple(int(s) for s in self.image_size)
        if len(self.stage_channels) != 4:
            raise ConfigError(f"stage_channels must have 4 entries, got {len(self.stage_channels)}")
        if len(self.image_size) != 2 or any(s <= 0 or s % 32 for s in self.image_size):
            raise ConfigError(f"image size {self.image_size} must be positive and divisible by 32")
        if self.decoder_act not in DECODER_ACTS:
            raise ConfigError(f"decoder_act must be one of {DECODER_ACTS}, got {self.decoder_act!r}")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}, got {self.init!r}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.mixer_kind not in ("dct", "conv"):
            raise ConfigError(f"mixer_kind must be 'dct' or 'conv', got {self.mixer_kind!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown frequency strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.mixer_kind == "dct":
            bad = [c for c in self.stage_channels if c % self.mixer_heads]
            if bad:
                raise ConfigError(f"stage channels {bad} not divisible by mixer heads M={self.mixer_heads}")
        if not self.residual_init_scale > 0:
            raise ConfigError(f"residual_init_scale must be positive, got {self.residual_init_scale}")
        for name in ("blocks_per_level", "mlp_ratio", "mixer_expansion", "decoder_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["image_size"] = list(self.image_size)
        return d


class PatchEmbed(Module):
    def __init__(self, out_channels: int = 32, norm: str = "group", rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(3, out_channels, 3, stride=2, padding=1, rng=rng)
        self.norm = make_norm(norm, out_channels)

    def forward(self, image: Tensor) -> Tensor:
        return patch_embed(image, self)


def patch_embed(image: Tensor, embed: PatchEmbed) -> Tensor:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ConfigError(f"patch embedding expects N x 3 x H x W, got {image.shape}")
    if image.shape[2] % 2 or image.shape[3] % 2:
        raise ConfigError(f"patch embedding needs even H and W, got {image.shape[2]}x{image.shape[3]}")
    return embed.norm(embed.conv(image))


class MLPDecoder(Module):
    """Per-stage 1x1 projection of the concatenated pair, fused at half resolution by a 1x1 classifier.

    The activation between the two layers is what lets the head compare the two dates pixel by pixel;
    without it the logit is a sum of per-date terms.
    """

    def __init__(self, stage_channels: Sequence[int], width: int, num_classes: int, act: str = "gelu", rng=None):
        super().__init__()
        self.act = act
        self.proj = ModuleList(Conv2d(2 * c, width, 1, rng=rng) for c in stage_channels)
        self.classifier = Conv2d(width * len(stage_channels), num_classes, 1, rng=rng)

    def forward(self, features) -> Tensor:
        return mlp_decode(features, self)


def mlp_decode(features: Sequence[tuple[Tensor, Tensor]], decoder: MLPDecoder) -> Tensor:
    if len(features) != len(decoder.proj):
        raise UsageError(f"decoder needs {len(decoder.proj)} feature pairs, got {len(features)}")
    h, w = features[0][0].shape[2:]
    maps = []
    for (g1, g2), proj in zip(features, decoder.proj):
        # bilinear resizing and the 1x1 projection commute (interpolation weights sum to one);
        # resizing first keeps every projection at the same half resolution
        pair = ops.bilinear_resize(ops.concat([g1, g2], axis=1), h, w)
        m = proj(pair)
        maps.append(ops.gelu(m) if decoder.act == "gelu" else m)
    logits = decoder.classifier(ops.concat(maps, axis=1))
    return ops.bilinear_resize(logits, 2 * h, 2 * w)


class STeInFormer(Module):
    def __init__(self, cfg: Optional[ModelConfig] = None, rng: Optional[np.random.Generator] = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.init_seed)
        sc = cfg.stage_channels

        def mixer(c):
            mc = MixerConfig(
                c, heads=cfg.mixer_heads, p=cfg.mixer_p, expansion=cfg.mixer_expansion,
                strategy=cfg.strategy, seed=cfg.frequency_seed,
            )
            return build_mixer(cfg.mixer_kind, mc, rng=rng)

        self.embed = PatchEmbed(sc[0], cfg.norm, rng=rng)
        self.transitions = ModuleList(Conv2d(sc[i], sc[i + 1], 3, stride=2, padding=1, rng=rng) for i in range(3))
        self.stages = ModuleList(
            CSIStage(s, sc, mixer, cfg.mlp_ratio, cfg.blocks_per_level, cfg.cti_difference, cfg.norm, rng=rng)
            for s in range(1, 5)
        )
        self.decoder = MLPDecoder(sc, cfg.decoder_channels, cfg.num_classes, cfg.decoder_act, rng=rng)
        if cfg.init == "lecun":
            fan_in_init(self, rng)
        scale_residual_branches(self, cfg.residual_init_scale)

    def forward(self, t1: Tensor, t2: Tensor):
        return model_forward(t1, t2, self)


def fan_in_init(model: Module, rng: np.random.Generator) -> None:
    """Redraw conv weights with std ``1/sqrt(fan_in)`` so activations keep their scale through deep plain conv chains.

    The frequency scorer keeps its identity start.
    """
    for name, m in model.named_modules():
        if isinstance(m, Conv2d) and not name.endswith("scorer.conv"):
            fan_in = m.weight.shape[1] * m.weight.shape[2] * m.weight.shape[3]
            m.weight.data = trunc_normal(rng, m.weight.shape, std=fan_in**-0.5)


def scale_residual_branches(model: Module, scale: float) -> None:
    """Shrink the mixer and MLP output projections so every block starts close to identity.

    With a single DC frequency the mixer is a plain box filter and full-size
    branches swamp the residual stream, which drives training into the
    all-negative solution.
    """
    for name, m in model.named_modules():
        if name.endswith(("mixer.proj_out", "mlp.fc2")):
            m.weight.data = m.weight.data * scale


def model_forward(t1: Tensor, t2: Tensor, model: STeInFormer) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
    """Returns full-resolution logits and the four per-stage ``(G1, G2)`` pairs."""
    if t1.shape != t2.shape:
        raise ConfigError(f"image pair shapes differ: {t1.shape} vs {t2.shape}")
    if t1.ndim != 4 or t1.shape[2] % 32 or t1.shape[3] % 32:
        raise ConfigError(f"images must be N x 3 x H x W with H, W divisible by 32, got {t1.shape}")
    x1, x2 = model.embed(t1), model.embed(t2)
    feats = []
    for s, stage in enumerate(model.stages):
        if s:
            tr = model.transitions[s - 1]
            x1, x2 = tr(x1), tr(x2)
        x1, x2 = stage(x1, x2)
        feats.append((x1, x2))
    return model.decoder(feats), feats


def build_model(cfg: Optional[ModelConfig] = None, dtype=np.float32) -> STeInFormer:
    cfg = cfg or ModelConfig()
    return STeInFormer(cfg).to_dtype(dtype)
