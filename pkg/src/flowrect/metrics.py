"""Deterministic consistency metrics on pooled-pixel frame embeddings.

Scores are raw cosine similarities in [-1, 1] (not multiplied by 100).  They
are meant for comparing configurations with each other, not for comparison
with numbers obtained from learned image embeddings.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError, TooFewFramesError
from .tensors import FrameSequence

POOL = 4
BINS = 8


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, FrameSequence) else np.asarray(x, dtype=np.float32)


def _center(v: np.ndarray) -> np.ndarray:
    # a constant vector centers to exact zeros (subtracting a rounded mean may not)
    if np.all(v == v[0]):
        return np.zeros_like(v)
    return v - v.mean()


def pooled_pixels(frame) -> np.ndarray:
    """4x4 average pooling of ``[C, H, W]`` (edges replicated to a multiple of 4), mean-centered."""
    f = np.asarray(frame, dtype=np.float64)
    c, h, w = f.shape
    f = np.pad(f, ((0, 0), (0, -h % POOL), (0, -w % POOL)), mode="edge")
    pooled = f.reshape(c, f.shape[1] // POOL, POOL, f.shape[2] // POOL, POOL).mean(axis=(2, 4)).ravel()
    return _center(pooled)


def channel_histograms(frame) -> np.ndarray:
    """8-bin histogram per channel over [-1, 1], as fractions, mean-centered."""
    f = np.asarray(frame, dtype=np.float64)
    hists = [np.histogram(ch, bins=BINS, range=(-1.0, 1.0))[0] / ch.size for ch in f]
    return _center(np.concatenate(hists))


def frame_embed(frame) -> np.ndarray:
    return np.concatenate([pooled_pixels(frame), channel_histograms(frame)])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def temporal_consistency(video) -> float:
    x = _frames(video)
    if x.shape[0] < 2:
        raise TooFewFramesError("temporal consistency needs at least 2 frames")
    emb = [frame_embed(f) for f in x]
    return float(np.mean([cosine(a, b) for a, b in zip(emb, emb[1:])]))


def edited_frame_consistency(video, x_edit_1) -> float:
    ref = frame_embed(x_edit_1)
    return float(np.mean([cosine(frame_embed(f), ref) for f in _frames(video)]))


def original_video_consistency(video, x_src) -> float:
    a, b = _frames(video), _frames(x_src)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"frame counts differ: {a.shape[0]} vs {b.shape[0]}")
    return float(np.mean([cosine(frame_embed(f), frame_embed(g)) for f, g in zip(a, b)]))


@dataclass(frozen=True)
class MetricsReport:
    tc: float
    efc: float
    ovc: float
    aec: float
    mse_vs_reference: float

    @classmethod
    def build(cls, tc: float, efc: float, ovc: float, mse: float) -> "MetricsReport":
        return cls(tc, efc, ovc, (efc + ovc) / 2.0, mse)

    def table(self) -> str:
        rows = [("TC", self.tc), ("EFC", self.efc), ("OVC", self.ovc), ("AEC", self.aec), ("MSE", self.mse_vs_reference)]
        return "\n".join(f"{name:<4} {value: .6f}" for name, value in rows)


def evaluate_video(video, x_edit_1, x_src, reference=None) -> MetricsReport:
    """All metrics for one edited video; MSE is against ``reference`` (or ``x_src``)."""
    v = _frames(video)
    ref = _frames(reference) if reference is not None else _frames(x_src)
    if ref.shape != v.shape:
        raise ShapeError(f"reference {ref.shape} does not match video {v.shape}")
    mse = float(np.mean((v.astype(np.float64) - ref) ** 2))
    return MetricsReport.build(
        temporal_consistency(v), edited_frame_consistency(v, x_edit_1), original_video_consistency(v, x_src), mse
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    tc, efc, ovc, mse = (float(np.mean([getattr(r, k) for r in reports])) for k in ("tc", "efc", "ovc", "mse_vs_reference"))
    return MetricsReport.build(tc, efc, ovc, mse)


def write_report_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        row = asdict(report)
        w.writerow(list(row))
        w.writerow([repr(v) for v in row.values()])
