"""Block-matching optical flow and backward warping.

Flow convention: ``flow[i]`` is a ``[2, H, W]`` field (channel 0 horizontal,
channel 1 vertical, in pixels) such that frame ``i + 1`` at pixel ``p`` shows
what frame ``i`` showed at ``p - flow[i](p)``.  ``warp(frame_i, flow[i])``
therefore approximates ``frame_{i+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericInputError, ShapeError, TooFewFramesError
from .tensors import FrameSequence


@dataclass(frozen=True, eq=False)
class FlowField:
    flow: np.ndarray  # [L-1, 2, H, W]

    def __post_init__(self):
        f = np.asarray(self.flow, dtype=np.float32)
        if f.ndim != 4 or f.shape[1] != 2:
            raise ShapeError(f"flow must be [L-1, 2, H, W], got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise NumericInputError("flow contains non-finite values")
        limit = max(f.shape[2], f.shape[3])
        if f.size and np.abs(f).max() > limit:
            raise ShapeError(f"displacement exceeds frame extent {limit}")
        object.__setattr__(self, "flow", f)

    def __len__(self) -> int:
        return self.flow.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.flow[i]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.flow[:, 0], self.flow[:, 1])


def _downsample(img: np.ndarray) -> np.ndarray:
    """2x2 mean pooling of ``[C, H, W]``; odd edges are replicated first."""
    c, h, w = img.shape
    img = np.pad(img, ((0, 0), (0, h % 2), (0, w % 2)), mode="edge")
    return img.reshape(c, img.shape[1] // 2, 2, img.shape[2] // 2, 2).mean(axis=(2, 4))


def _candidates(radius: int) -> np.ndarray:
    """All offsets in the search window, ordered by (|d|^2, dy, dx)."""
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()
    order = np.lexsort((dx, dy, dy * dy + dx * dx))
    return np.stack([dy[order], dx[order]], axis=1)


def _block_starts(n: int, block: int) -> np.ndarray:
    return np.arange(0, n, block)


def _match_level(prev: np.ndarray, cur: np.ndarray, base: np.ndarray, block: int, radius: int) -> np.ndarray:
    """Refine integer flow ``base`` ``[2, H, W]`` blockwise by exhaustive SAD search.

    Each block of ``cur`` keeps the offset with the lowest sum of absolute
    differences against ``prev`` sampled at ``p - (base + offset)`` (edge
    clamped).  Equal costs resolve to the smallest offset, then the
    lexicographically smallest ``(dy, dx)``.
    """
    c, h, w = cur.shape
    block = max(1, min(block, h, w))
    ys, xs = _block_starts(h, block), _block_starts(w, block)
    # one base displacement per block, read at the block's top-left pixel
    by = base[1][np.ix_(ys, xs)]
    bx = base[0][np.ix_(ys, xs)]
    block_row = np.minimum(np.arange(h) // block, len(ys) - 1)
    block_col = np.minimum(np.arange(w) // block, len(xs) - 1)
    py = by[block_row][:, block_col]
    px = bx[block_row][:, block_col]
    yy, xx = np.mgrid[0:h, 0:w]

    cands = _candidates(radius)
    costs = np.empty((len(cands), len(ys), len(xs)))
    cur64 = cur.astype(np.float64)
    for k, (dy, dx) in enumerate(cands):
        sy = np.clip(yy - py - dy, 0, h - 1)
        sx = np.clip(xx - px - dx, 0, w - 1)
        diff = np.abs(cur64 - prev[:, sy, sx]).sum(axis=0)
        costs[k] = np.add.reduceat(np.add.reduceat(diff, ys, axis=0), xs, axis=1)
    best = np.argmin(costs, axis=0)  # first minimum = tie-break winner
    out_y = by + cands[best, 0]
    out_x = bx + cands[best, 1]
    return np.stack([out_x[block_row][:, block_col], out_y[block_row][:, block_col]]).astype(np.int64)


def block_match(prev: np.ndarray, cur: np.ndarray, levels: int = 3, block: int = 8, radius: int = 4) -> np.ndarray:
    """Coarse-to-fine integer flow from ``cur`` back to ``prev`` (both ``[C, H, W]``)."""
    if prev.shape != cur.shape:
        raise ShapeError(f"frame shapes differ: {prev.shape} vs {cur.shape}")
    pyr_prev, pyr_cur = [prev.astype(np.float64)], [cur.astype(np.float64)]
    for _ in range(levels - 1):
        if min(pyr_prev[-1].shape[1:]) < 2:
            break
        pyr_prev.append(_downsample(pyr_prev[-1]))
        pyr_cur.append(_downsample(pyr_cur[-1]))
    flow = np.zeros((2,) + pyr_cur[-1].shape[1:], dtype=np.int64)
    for lvl in range(len(pyr_cur) - 1, -1, -1):
        h, w = pyr_cur[lvl].shape[1:]
        if flow.shape[1:] != (h, w):
            flow = np.repeat(np.repeat(flow * 2, 2, axis=1), 2, axis=2)
            flow = np.pad(flow, ((0, 0), (0, max(0, h - flow.shape[1])), (0, max(0, w - flow.shape[2]))), mode="edge")
            flow = flow[:, :h, :w]
        flow = _match_level(pyr_prev[lvl], pyr_cur[lvl], flow, block, radius)
    limit = max(prev.shape[1:])
    return np.clip(flow, -limit, limit)


def estimate_flow(seq, levels: int = 3, block: int = 8, radius: int = 4) -> FlowField:
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=np.float32)
    if frames.shape[0] < 2:
        raise TooFewFramesError(f"optical flow needs at least 2 frames, got {frames.shape[0]}")
    flows = [block_match(frames[i], frames[i + 1], levels, block, radius) for i in range(len(frames) - 1)]
    return FlowField(np.stack(flows).astype(np.float32))


def _check_warp_shapes(img: np.ndarray, flow: np.ndarray) -> None:
    if img.ndim != 3 or flow.shape != (2,) + img.shape[1:]:
        raise ShapeError(f"flow {flow.shape} does not match image {img.shape}")


def warp_bilinear(frame, flow) -> np.ndarray:
    """Backward warp: ``out(p) = frame(p - flow(p))``, bilinear, edge clamped."""
    img = np.asarray(frame, dtype=np.float32)
    flow = np.asarray(flow, dtype=np.float64)
    _check_warp_shapes(img, flow)
    _, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sy = np.clip(yy - flow[1], 0, h - 1)
    sx = np.clip(xx - flow[0], 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy, wx = sy - y0, sx - x0
    src = img.astype(np.float64)
    out = (
        (1 - wy) * (1 - wx) * src[:, y0, x0]
        + (1 - wy) * wx * src[:, y0, x1]
        + wy * (1 - wx) * src[:, y1, x0]
        + wy * wx * src[:, y1, x1]
    )
    return out.astype(np.float32)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def warp_noise(noise, flow) -> np.ndarray:
    """Backward warp by nearest-integer displacement; every output is a copy of one input."""
    img = np.asarray(noise, dtype=np.float32)
    flow = np.asarray(flow, dtype=np.float64)
    _check_warp_shapes(img, flow)
    _, h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    sy = np.clip(yy - round_half_away(flow[1]).astype(np.int64), 0, h - 1)
    sx = np.clip(xx - round_half_away(flow[0]).astype(np.int64), 0, w - 1)
    return img[:, sy, sx]


def flow_magnitude_image(field: FlowField) -> np.ndarray:
    """``[L-1, H, W]`` uint8 magnitudes scaled so the frame extent maps to 255."""
    mag = field.magnitude()
    limit = max(field.flow.shape[2:])
    return np.clip(np.floor(mag / limit * 255.0 + 0.5), 0, 255).astype(np.uint8)
