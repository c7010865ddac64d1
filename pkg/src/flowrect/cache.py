"""Deviation caching: reuse the last source-branch prediction while the
target-branch prediction has drifted by at most ``delta`` since it was made.

Drift is the running sum, over executed steps, of the mean absolute
difference between consecutive target predictions.  Averaging over elements
(rather than summing) keeps ``delta`` independent of the tensor size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

REUSE = "reuse"
REFRESH = "refresh"

# Desk-scale default, tuned once on the toy editing suite (see README).
DEFAULT_DELTA = 0.2
# Threshold used with the full-size video model; not meaningful at toy scale.
PAPER_DELTA = 0.5


def l1_variation(v_now, v_prev) -> float:
    a = np.asarray(v_now, dtype=np.float64)
    b = np.asarray(v_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


@dataclass
class CacheState:
    t_p: float | None = None
    cached_v_src: np.ndarray | None = None
    prev_v_tar: np.ndarray | None = None
    d_cum: float = 0.0
    hits: int = 0
    misses: int = 0

    @property
    def steps(self) -> int:
        return self.hits + self.misses


def accumulate(state: CacheState, v_tar_now, v_tar_prev) -> CacheState:
    state.d_cum += l1_variation(v_tar_now, v_tar_prev)
    return state


def decide(state: CacheState, delta: float | None) -> str:
    """``REUSE`` iff a cached value exists, caching is enabled and ``d_cum <= delta``."""
    if state.cached_v_src is None or delta is None:
        return REFRESH
    return REUSE if state.d_cum <= delta else REFRESH


class DeviationCache:
    """Per-run cache driver; call :meth:`step` once per scheduled timestep."""

    def __init__(self, delta: float | None):
        if delta is not None and not delta >= 0:
            raise ValueError(f"delta must be >= 0 or None, got {delta}")
        self.delta = delta
        self.state = CacheState()

    def step(self, t: float, v_tar: np.ndarray) -> str:
        s = self.state
        if s.prev_v_tar is not None:
            accumulate(s, v_tar, s.prev_v_tar)
        s.prev_v_tar = v_tar
        decision = decide(s, self.delta)
        if decision == REUSE:
            s.hits += 1
        else:
            s.misses += 1
        return decision

    def store(self, t: float, v_src: np.ndarray) -> None:
        s = self.state
        s.t_p = t
        s.cached_v_src = v_src
        s.d_cum = 0.0

    @property
    def cached(self) -> np.ndarray:
        if self.state.cached_v_src is None:
            raise RuntimeError("no cached source prediction")
        return self.state.cached_v_src


@dataclass(frozen=True)
class CacheReport:
    steps: int
    src_evals: int
    hits: int
    hit_rate: float
    reduction: float  # fraction of source evaluations saved vs. an uncached run

    def lines(self) -> list[str]:
        return [
            f"steps              {self.steps}",
            f"source evaluations {self.src_evals}",
            f"cache hits         {self.hits}",
            f"hit rate           {100 * self.hit_rate:.1f}%",
            f"eval reduction     {100 * self.reduction:.1f}%",
        ]


def cache_report(trace) -> CacheReport:
    """Summarize an :class:`~flowrect.sampler.EditTrace`.

    The uncached baseline is taken from the per-step evaluation counts the run
    would have needed had every step refreshed.
    """
    steps = len(trace.records)
    hits = sum(1 for r in trace.records if r.cache_hit)
    baseline = trace.uncached_src_evals
    saved = baseline - trace.src_evals if baseline else 0
    return CacheReport(
        steps=steps,
        src_evals=trace.src_evals,
        hits=hits,
        hit_rate=hits / steps if steps else 0.0,
        reduction=saved / baseline if baseline else 0.0,
    )


def parse_delta(text: str) -> float | None:
    """``off`` disables caching, ``inf`` caches forever, otherwise a real >= 0."""
    t = text.strip().lower()
    if t in ("off", "none", "disabled"):
        return None
    value = math.inf if t in ("inf", "infinity") else float(t)
    if not value >= 0:
        raise ValueError(f"delta must be >= 0, got {text}")
    return value
