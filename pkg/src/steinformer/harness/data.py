"""Bi-temporal samples: a seeded synthetic generator, the A/B/label PNG layout, and dihedral augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..errors import ConfigError, DataError, IngestionError


@dataclass
class BitemporalSample:
    t1: np.ndarray  # 3 x H x W in [0, 1]
    t2: np.ndarray
    label: np.ndarray  # H x W in {0, 1}
    id: str = ""
    shapes: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.t1.shape != self.t2.shape or self.t1.ndim != 3 or self.t1.shape[0] != 3:
            raise DataError(f"sample {self.id!r}: image shapes {self.t1.shape} / {self.t2.shape} must be 3 x H x W")
        if self.label.shape != self.t1.shape[1:]:
            raise DataError(f"sample {self.id!r}: label {self.label.shape} vs images {self.t1.shape}")
        if not np.all((self.label == 0) | (self.label == 1)):
            raise DataError(f"sample {self.id!r}: label must be binary")


@dataclass(frozen=True)
class Shape:
    kind: str  # "rect" or "ellipse"
    cy: float
    cx: float
    ry: float
    rx: float
    color: tuple
    role: str  # "static", "removed", "added", "distractor"


@dataclass
class SynthSpec:
    seed: int = 0
    count: int = 100
    size: int = 64
    static_shapes: tuple = (1, 3)
    changed_shapes: tuple = (1, 3)
    illumination: float = 0.15
    max_shift: int = 1
    distractors: int = 2
    noise: float = 0.02

    def __post_init__(self):
        self.static_shapes = tuple(self.static_shapes)
        self.changed_shapes = tuple(self.changed_shapes)
        if self.size < 32 or self.size % 32:
            raise ConfigError(f"synthetic size must be a multiple of 32 and >= 32, got {self.size}")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        for name in ("static_shapes", "changed_shapes"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ConfigError(f"{name} range {lo}..{hi} is invalid")
        if min(self.illumination, self.max_shift, self.distractors, self.noise) < 0:
            raise ConfigError("perturbation amplitudes must be >= 0")


def rasterize(shape: Shape, size: int) -> np.ndarray:
    """Boolean mask of pixel centres inside the shape."""
    y, x = np.mgrid[0:size, 0:size]
    dy, dx = (y - shape.cy) / shape.ry, (x - shape.cx) / shape.rx
    if shape.kind == "rect":
        return (np.abs(dy) <= 1) & (np.abs(dx) <= 1)
    return dy * dy + dx * dx <= 1


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random background: a few low-frequency cosines per channel around a base colour."""
    y, x = np.mgrid[0:size, 0:size] / size
    img = np.empty((3, size, size))
    base = rng.uniform(0.3, 0.6, size=3)
    for c in range(3):
        acc = np.zeros((size, size))
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 4.0, size=2)
            acc += rng.uniform(0.02, 0.06) * np.cos(2 * np.pi * (fy * y + fx * x) + rng.uniform(0, 2 * np.pi))
        img[c] = base[c] + acc
    return img


def _draw_shape(rng, size, role, placed_masks, avoid: Optional[np.ndarray]) -> Optional[Shape]:
    for _ in range(30):
        ry, rx = rng.uniform(size / 14, size / 6, size=2)
        cy, cx = rng.uniform(ry, size - 1 - ry), rng.uniform(rx, size - 1 - rx)
        color = tuple(float(v) for v in rng.uniform(0.0, 1.0, size=3))
        s = Shape("rect" if rng.random() < 0.5 else "ellipse", cy, cx, ry, rx, color, role)
        m = rasterize(s, size)
        if not m.any():
            continue
        if avoid is not None and (m & avoid).any():
            continue
        placed_masks.append(m)
        return s
    return None


def _paint(img: np.ndarray, s: Shape, size: int, color=None) -> None:
    m = rasterize(s, size)
    for c in range(3):
        img[c][m] = (color or s.color)[c]


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate with edge replication (models a small registration error)."""
    if dy == 0 and dx == 0:
        return img
    k = max(abs(dy), abs(dx))
    padded = np.pad(img, ((0, 0), (k, k), (k, k)), mode="edge")
    h, w = img.shape[1:]
    return padded[:, k - dy : k - dy + h, k - dx : k - dx + w]


def edit_masks(shapes: list[Shape], size: int) -> tuple[np.ndarray, np.ndarray]:
    """Scene-frame masks of the labelled shapes before and after the edit."""
    before = np.zeros((size, size), dtype=bool)
    after = np.zeros((size, size), dtype=bool)
    for s in shapes:
        if s.role in ("static", "removed"):
            before |= rasterize(s, size)
        if s.role in ("static", "added"):
            after |= rasterize(s, size)
    return before, after


def _one_sample(rng: np.random.Generator, spec: SynthSpec, idx: int) -> BitemporalSample:
    n = spec.size
    shapes: list[Shape] = []
    masks: list[np.ndarray] = []
    for _ in range(rng.integers(spec.static_shapes[0], spec.static_shapes[1] + 1)):
        s = _draw_shape(rng, n, "static", masks, None)
        if s:
            shapes.append(s)
    for _ in range(spec.distractors):
        s = _draw_shape(rng, n, "distractor", masks, None)
        if s:
            shapes.append(s)
    # edited shapes never overlap anything, so the label is exactly their union
    for _ in range(rng.integers(spec.changed_shapes[0], spec.changed_shapes[1] + 1)):
        occupied = np.any(masks, axis=0) if masks else None
        s = _draw_shape(rng, n, "added" if rng.random() < 0.5 else "removed", masks, occupied)
        if s:
            shapes.append(s)

    bg = _texture(rng, n)
    t1, t2 = bg.copy(), bg.copy()
    for s in shapes:
        if s.role in ("static", "removed"):
            _paint(t1, s, n)
        if s.role in ("static", "added"):
            _paint(t2, s, n)
        if s.role == "distractor":
            # same object in both frames with a seasonal tint
            _paint(t1, s, n)
            tint = np.clip(np.array(s.color) + rng.uniform(-0.15, 0.15, size=3), 0, 1)
            _paint(t2, s, n, tuple(tint))

    gain = 1.0 + rng.uniform(-spec.illumination, spec.illumination, size=(3, 1, 1))
    t2 = t2 * gain
    dy, dx = rng.integers(-spec.max_shift, spec.max_shift + 1, size=2)
    t2 = _shift(t2, int(dy), int(dx))
    t1 = t1 + rng.normal(0, spec.noise, size=t1.shape)
    t2 = t2 + rng.normal(0, spec.noise, size=t2.shape)

    before, after = edit_masks(shapes, n)
    label = (before ^ after).astype(np.float32)
    return BitemporalSample(
        np.clip(t1, 0, 1).astype(np.float32),
        np.clip(t2, 0, 1).astype(np.float32),
        label,
        id=f"synth_{spec.seed}_{idx:05d}",
        shapes=shapes,
    )


def synth_generate(spec: SynthSpec) -> list[BitemporalSample]:
    rng = np.random.default_rng(spec.seed)
    return [_one_sample(rng, spec, i) for i in range(spec.count)]


# ---------------------------------------------------------------------------
# A/B/label directory layout

SUBDIRS = ("A", "B", "label")


def _read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def _read_label(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.float32)


def load_dataset(root) -> list[BitemporalSample]:
    root = Path(root)
    dirs = [root / d for d in SUBDIRS]
    for d in dirs:
        if not d.is_dir():
            raise IngestionError(f"dataset root {root} is missing the {d.name}/ directory")
    names = [{p.name for p in d.glob("*.png")} for d in dirs]
    every = set().union(*names)
    for d, have in zip(dirs, names):
        orphans = sorted(every - have)
        if orphans:
            raise IngestionError(f"{orphans[0]} has no counterpart in {d.name}/ ({len(orphans)} unmatched)")
    out = []
    for name in sorted(every):
        t1 = _read_rgb(dirs[0] / name)
        t2 = _read_rgb(dirs[1] / name)
        lab = _read_label(dirs[2] / name)
        if t1.shape != t2.shape or lab.shape != t1.shape[1:]:
            raise DataError(f"{name}: dimensions differ (A {t1.shape[1:]}, B {t2.shape[1:]}, label {lab.shape})")
        out.append(BitemporalSample(t1, t2, lab, id=Path(name).stem))
    return out


def save_dataset(samples: list[BitemporalSample], root) -> Path:
    root = Path(root)
    for d in SUBDIRS:
        (root / d).mkdir(parents=True, exist_ok=True)
    for s in samples:
        name = f"{s.id}.png"
        for d, img in (("A", s.t1), ("B", s.t2)):
            arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
            Image.fromarray(arr, "RGB").save(root / d / name)
        Image.fromarray((s.label * 255).astype(np.uint8), "L").save(root / "label" / name)
    return root


# ---------------------------------------------------------------------------
# augmentation


def dihedral(arr: np.ndarray, k: int) -> np.ndarray:
    """Element ``k`` in 0..7 of the dihedral group on the last two axes: ``k % 4`` quarter turns, then a flip if ``k >= 4``."""
    out = np.rot90(arr, k % 4, axes=(-2, -1))
    if k >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(sample: BitemporalSample, seed) -> BitemporalSample:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = int(rng.integers(8))
    h, w = sample.label.shape
    if k % 2 and h != w:
        raise ConfigError(f"90-degree rotation needs square samples, got {h}x{w}")
    return BitemporalSample(dihedral(sample.t1, k), dihedral(sample.t2, k), dihedral(sample.label, k), id=sample.id)


def swap_dates(sample: BitemporalSample) -> BitemporalSample:
    """The same scene read backwards in time; a change is a change in either direction."""
    return BitemporalSample(sample.t2, sample.t1, sample.label, id=sample.id)
