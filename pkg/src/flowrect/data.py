"""Synthetic video clips with exact ground-truth optical flow.

A clip is a single coloured shape moving over a uniform background.  Shape
positions and velocities are integers, so translated frames are exact
toroidal rolls of one another and the ground-truth flow is exact.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import Condition
from .tensors import FrameSequence, rng_stream

MOTIONS = ("translate", "bounce", "rotate-hue")
SHAPES = ("square", "disc")

DEFAULT_COLORS = (
    (0.9, -0.8, -0.8),
    (-0.8, 0.9, -0.8),
    (-0.8, -0.8, 0.9),
    (0.9, 0.9, -0.8),
    (0.9, -0.8, 0.9),
    (-0.8, 0.9, 0.9),
)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    motions: tuple[str, ...] = ("translate", "bounce")
    shapes: tuple[str, ...] = SHAPES
    size: int = 16
    frames: int = 8
    channels: int = 3
    num_classes: int = 4
    colors: tuple[tuple[float, ...], ...] = DEFAULT_COLORS[:4]
    shape_size: int = 6
    max_speed: int = 2
    background: float = -0.4
    num_clips: int = 64
    seed: int = 0

    def __post_init__(self):
        if not set(self.motions) <= set(MOTIONS) or not self.motions:
            raise DomainError(f"motions must be drawn from {MOTIONS}")
        if not set(self.shapes) <= set(SHAPES) or not self.shapes:
            raise DomainError(f"shapes must be drawn from {SHAPES}")
        if len(self.colors) < self.num_classes:
            raise DomainError("need one colour per content class")
        if self.num_clips < 1:
            raise DomainError("dataset must contain at least one clip")
        if not 1 <= self.shape_size < self.size:
            raise DomainError("shape_size must be smaller than the frame")

    def color(self, k: int) -> np.ndarray:
        c = np.asarray(self.colors[k], dtype=np.float32)
        if self.channels == 1:
            return np.asarray([c.mean()], dtype=np.float32)
        return c


@dataclass(frozen=True, eq=False)
class Clip:
    frames: FrameSequence
    flow: np.ndarray  # [L-1, 2, H, W] backward flow, pixels
    token: int
    motion: str
    shape: str
    masks: np.ndarray = field(repr=False)  # [L, H, W] bool

    def condition(self) -> Condition:
        x = self.frames.frames
        return Condition(x[0], np.zeros_like(x[1:]), self.token)


def shape_mask(kind: str, size: int, h: int, w: int, y: int, x: int, wrap: bool = True) -> np.ndarray:
    """Boolean mask of a square (top-left at y, x) or disc (bounding box at y, x)."""
    yy, xx = np.mgrid[0:h, 0:w]
    dy = (yy - y) % h if wrap else yy - y
    dx = (xx - x) % w if wrap else xx - x
    if kind == "square":
        return (dy >= 0) & (dy < size) & (dx >= 0) & (dx < size)
    r = size / 2.0
    return ((dy + 0.5 - r) ** 2 + (dx + 0.5 - r) ** 2 <= r * r) & (dy >= 0) & (dx >= 0)


def render(spec: SyntheticDatasetSpec, masks: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """Paint per-frame ``colors`` ``[L, C]`` into ``masks`` over the background."""
    n, h, w = masks.shape
    out = np.full((n, spec.channels, h, w), spec.background, dtype=np.float32)
    for i in range(n):
        out[i][:, masks[i]] = colors[i][:, None]
    return out


def rotate_hue(rgb: np.ndarray, turns: float) -> np.ndarray:
    """Rotate an RGB colour in [-1, 1] around the hue circle."""
    r, g, b = ((np.asarray(rgb, dtype=np.float64) + 1.0) / 2.0).tolist()
    hh, ll, ss = colorsys.rgb_to_hls(r, g, b)
    out = colorsys.hls_to_rgb((hh + turns) % 1.0, ll, ss)
    return (np.asarray(out) * 2.0 - 1.0).astype(np.float32)


def make_clip(spec: SyntheticDatasetSpec, motion: str, shape: str, token: int, y: int, x: int,
              vy: int, vx: int) -> Clip:
    n, s, hw = spec.frames, spec.shape_size, spec.size
    flow = np.zeros((max(n - 1, 0), 2, hw, hw), dtype=np.float32)
    base = spec.color(token)
    colors = np.repeat(base[None], n, axis=0)
    if motion == "translate":
        pos = [(y + vy * i, x + vx * i) for i in range(n)]
        masks = np.stack([shape_mask(shape, s, hw, hw, py, px) for py, px in pos])
        for i in range(1, n):
            flow[i - 1, 0][masks[i]] = vx
            flow[i - 1, 1][masks[i]] = vy
    elif motion == "bounce":
        lo, hi = 0, hw - s
        pos = [(y, x)]
        py, px = y, x
        for _ in range(1, n):
            py, vy = _reflect(py + vy, vy, lo, hi)
            px, vx = _reflect(px + vx, vx, lo, hi)
            pos.append((py, px))
        masks = np.stack([shape_mask(shape, s, hw, hw, py, px, wrap=False) for py, px in pos])
        for i in range(1, n):
            flow[i - 1, 0][masks[i]] = pos[i][1] - pos[i - 1][1]
            flow[i - 1, 1][masks[i]] = pos[i][0] - pos[i - 1][0]
    elif motion == "rotate-hue":
        masks = np.stack([shape_mask(shape, s, hw, hw, y, x)] * n)
        if spec.channels == 3:
            colors = np.stack([rotate_hue(base, 0.5 * i / max(n - 1, 1)) for i in range(n)])
    else:
        raise DomainError(f"unknown motion family {motion!r}")
    frames = FrameSequence(render(spec, masks, colors))
    return Clip(frames, flow, token, motion, shape, masks)


def _reflect(p: int, v: int, lo: int, hi: int) -> tuple[int, int]:
    if p < lo:
        return 2 * lo - p, -v
    if p > hi:
        return 2 * hi - p, -v
    return p, v


def random_clip(spec: SyntheticDatasetSpec, rng: np.random.Generator, token: int | None = None) -> Clip:
    motion = spec.motions[rng.integers(len(spec.motions))]
    shape = spec.shapes[rng.integers(len(spec.shapes))]
    if token is None:
        token = int(rng.integers(spec.num_classes))
    hi = spec.size - spec.shape_size
    y, x = (int(v) for v in rng.integers(0, hi + 1, size=2))
    vy, vx = 0, 0
    while motion != "rotate-hue" and vy == 0 and vx == 0:
        vy, vx = (int(v) for v in rng.integers(-spec.max_speed, spec.max_speed + 1, size=2))
    return make_clip(spec, motion, shape, token, y, x, vy, vx)


class SyntheticDataset:
    """A fixed list of clips generated deterministically from ``spec.seed``."""

    def __init__(self, spec: SyntheticDatasetSpec):
        self.spec = spec
        rng = rng_stream(spec.seed, "data.clips")
        self.clips = [random_clip(spec, rng) for _ in range(spec.num_clips)]

    def __len__(self) -> int:
        return len(self.clips)

    def __getitem__(self, i: int) -> Clip:
        return self.clips[i]


def sample_training_pair(dataset: SyntheticDataset, rng: np.random.Generator) -> tuple[FrameSequence, Condition]:
    clip = dataset[int(rng.integers(len(dataset)))]
    return clip.frames, clip.condition()


@dataclass(frozen=True, eq=False)
class EditCase:
    """A source clip plus a recoloured first frame: same geometry, new class colour."""

    source: Clip
    edit_frame: np.ndarray  # [C, H, W]
    src_token: int
    tar_token: int
    reference: FrameSequence  # the source clip re-rendered in the target colour


def make_edit_case(spec: SyntheticDatasetSpec, clip: Clip, tar_token: int) -> EditCase:
    n = len(clip.frames)
    ref = render(spec, clip.masks, np.repeat(spec.color(tar_token)[None], n, axis=0))
    if clip.motion == "rotate-hue" and spec.channels == 3:
        turns = [0.5 * i / max(n - 1, 1) for i in range(n)]
        ref = render(spec, clip.masks, np.stack([rotate_hue(spec.color(tar_token), u) for u in turns]))
    reference = FrameSequence(ref)
    return EditCase(clip, reference.frames[0].copy(), clip.token, tar_token, reference)


def make_edit_suite(spec: SyntheticDatasetSpec, num_cases: int, seed: int = 1) -> list[EditCase]:
    """Held-out clips (distinct stream from the training set) with random recolouring edits."""
    rng = rng_stream(seed, "data.edit-suite")
    cases = []
    for _ in range(num_cases):
        clip = random_clip(spec, rng)
        tar = int(rng.integers(spec.num_classes - 1))
        tar = tar + 1 if tar >= clip.token else tar
        cases.append(make_edit_case(spec, clip, tar))
    return cases
