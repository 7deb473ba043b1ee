"""Parameter and FLOP accounting by static shape analysis.

Convention: one multiply-accumulate is two FLOPs; only convolutions (including
the fixed DCT filters, counted as the p x p depthwise convs they implement)
contribute. Norms, activations, element-wise ops and resizes are free.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO

from ..interactors import BaseBlock, CSIStage, CTIBlock, DSConv
from ..spectral import ConvMixer, DctFilter, DynamicFrequencyMixer, MultiFrequencyMixer
from ..tensor_core import Conv2d, Module
from .network import ModelConfig, STeInFormer

CONVENTION = "1 MAC = 2 FLOPs; convolutions only (norms, activations, resizes excluded)"


@dataclass
class LedgerRow:
    name: str
    params: int
    flops: int


class _Ledger:
    def __init__(self):
        self.rows: dict[str, LedgerRow] = {}

    def add(self, name: str, params: int, flops: int) -> None:
        row = self.rows.setdefault(name, LedgerRow(name, params, 0))
        row.flops += flops

    def conv(self, name: str, m: Conv2d, h: int, w: int, times: int) -> tuple[int, int]:
        ho, wo = m.spec.output_size(h, w)
        self.add(name, m.num_parameters(), 2 * times * m.macs(ho, wo))
        return ho, wo

    def norm(self, name: str, m: Module) -> None:
        self.add(name, m.num_parameters(), 0)

    def dsconv(self, name: str, m: DSConv, h: int, w: int, times: int) -> tuple[int, int]:
        h, w = self.conv(name + ".depthwise", m.depthwise, h, w, times)
        return self.conv(name + ".pointwise", m.pointwise, h, w, times)

    def mixer(self, name: str, m: Module, h: int, w: int, times: int) -> None:
        if isinstance(m, ConvMixer):
            self.conv(name + ".conv", m.conv, h, w, times)
            return
        self.conv(name + ".proj_in", m.proj_in, h, w, times)
        if isinstance(m, DynamicFrequencyMixer):
            p = m.cfg.p
            self.add(name + ".scorer.bank", 0, 2 * times * h * w * p**4)
            self.conv(name + ".scorer.conv", m.scorer.conv, p, p, times)
        elif not isinstance(m, MultiFrequencyMixer):
            raise TypeError(f"no accounting rule for mixer {type(m).__name__}")
        f: DctFilter = m.filter
        self.add(name + ".filter", 0, 2 * times * f.macs(h, w))
        self.conv(name + ".proj_out", m.proj_out, h, w, times)

    def block(self, name: str, b: BaseBlock, h: int, w: int, times: int) -> None:
        self.norm(name + ".norm1", b.norm1)
        self.mixer(name + ".mixer", b.mixer, h, w, times)
        self.norm(name + ".norm2", b.norm2)
        self.conv(name + ".mlp.fc1", b.mlp.fc1, h, w, times)
        self.conv(name + ".mlp.fc2", b.mlp.fc2, h, w, times)

    def stage(self, name: str, st: CSIStage, h: int, w: int, times: int) -> None:
        sizes = []
        for l in range(st.depth):
            for i, blk in enumerate(st.enc[l]):
                self.block(f"{name}.enc.{l}.{i}", blk, h, w, times)
            sizes.append((h, w))
            h, w = self.dsconv(f"{name}.down.{l}", st.down[l], h, w, times)
        cti: CTIBlock = st.cti
        # phi runs once per temporal gate, i.e. once per branch
        self.dsconv(name + ".cti.fuse", cti.fuse, h, w, times)
        for l in reversed(range(st.depth)):
            h, w = sizes[l]
            self.conv(f"{name}.fuse.{l}", st.fuse[l], h, w, times)
            for i, blk in enumerate(st.dec[l]):
                self.block(f"{name}.dec.{l}.{i}", blk, h, w, times)


def layer_ledger(model: STeInFormer, h: int, w: int) -> list[LedgerRow]:
    """Per-layer ``(name, params, flops)`` for one forward pass on an ``h x w`` image pair."""
    led = _Ledger()
    # the Siamese parts run once per temporal branch
    h, w = led.conv("embed.conv", model.embed.conv, h, w, 2)
    led.norm("embed.norm", model.embed.norm)
    half = (h, w)
    for s, stage in enumerate(model.stages):
        if s:
            h, w = led.conv(f"transitions.{s - 1}", model.transitions[s - 1], h, w, 2)
        led.stage(f"stages.{s}", stage, h, w, 2)
    for i, proj in enumerate(model.decoder.proj):
        led.conv(f"decoder.proj.{i}", proj, *half, 1)
    led.conv("decoder.classifier", model.decoder.classifier, *half, 1)
    return list(led.rows.values())


def count_params(cfg: Optional[ModelConfig] = None) -> int:
    return STeInFormer(cfg or ModelConfig()).num_parameters()


def estimate_flops(cfg: Optional[ModelConfig] = None, h: Optional[int] = None, w: Optional[int] = None) -> int:
    cfg = cfg or ModelConfig()
    h = h or cfg.image_size[0]
    w = w or cfg.image_size[1]
    return sum(r.flops for r in layer_ledger(STeInFormer(cfg), h, w))


def write_ledger_csv(rows: Iterable[LedgerRow], out: Optional[TextIO] = None) -> str:
    buf = out if out is not None else io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["name", "params", "flops"])
    for r in rows:
        wr.writerow([r.name, r.params, r.flops])
    return buf.getvalue() if out is None else ""
