"""Structure- and motion-preserving initialization.

Builds the shared ODE starting point, the two model conditions, and a noise
sequence whose frames are correlated along the source video's optical flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .model import Condition
from .optical_flow import FlowField, warp_noise
from .tensors import FrameSequence, LatentState, NoiseTensor

DEFAULT_T_MAX = 0.95
DEFAULT_BETA = 0.025
DEFAULT_ALPHA = 0.95


@dataclass(frozen=True)
class SmpiConfig:
    t_max: float = DEFAULT_T_MAX
    beta: float = DEFAULT_BETA
    alpha: float = DEFAULT_ALPHA
    # warp the already-modulated previous frame instead of the raw one
    recursive: bool = False

    def __post_init__(self):
        if not 0.0 < self.t_max <= 1.0:
            raise DomainError(f"t_max must lie in (0, 1], got {self.t_max}")
        if not self.beta >= 0.0:
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, FrameSequence) else np.asarray(x, dtype=np.float32)


def correlated_noise(eps: NoiseTensor, flow: FlowField | None, alpha: float, recursive: bool = False) -> NoiseTensor:
    """Blend each frame's fresh noise with the flow-warped noise of the frame before.

    ``out[0] = eps[0]`` and, for ``i >= 1``::

        out[i] = ((1 - a) * warp(eps[i-1], flow[i-1]) + a * eps[i]) / sqrt((1 - a)^2 + a^2)

    With ``recursive`` the warp reads ``out[i-1]`` instead of ``eps[i-1]``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    e = eps.eps
    n = e.shape[0]
    if n > 1:
        if flow is None:
            raise ShapeError("a flow field is required for clips with more than one frame")
        if flow.flow.shape != (n - 1, 2) + e.shape[2:]:
            raise ShapeError(f"flow {flow.flow.shape} does not match noise {e.shape}")
    a = float(alpha)
    scale = math.sqrt((1.0 - a) ** 2 + a * a)
    out = np.empty(e.shape, dtype=np.float32)
    out[0] = e[0]
    for i in range(1, n):
        prev = out[i - 1] if recursive else e[i - 1]
        warped = warp_noise(prev, flow.flow[i - 1]).astype(np.float64)
        out[i] = (((1.0 - a) * warped + a * e[i].astype(np.float64)) / scale).astype(np.float32)
    return NoiseTensor(out, eps.seed)


def init_boundary(x_src, eps_m, t_max: float) -> LatentState:
    """``(1 - t_max) * x_src + t_max * eps_m``; both ODE branches start here."""
    x = _frames(x_src)
    e = eps_m.eps if isinstance(eps_m, NoiseTensor) else np.asarray(eps_m, dtype=np.float32)
    if x.shape != e.shape:
        raise ShapeError(f"source {x.shape} and noise {e.shape} differ in shape")
    if not 0.0 <= t_max <= 1.0:
        raise DomainError(f"t_max must lie in [0, 1], got {t_max}")
    return LatentState(interpolate(x, e, t_max), t_max)


def interpolate(x: np.ndarray, e: np.ndarray, t: float) -> np.ndarray:
    """Point at time ``t`` on the straight path from ``x`` (t=0) to ``e`` (t=1), float32."""
    return np.float32(1.0 - t) * x + np.float32(t) * e


def build_target_condition(x_edit_1, x_src, beta: float, token: int) -> Condition:
    x = _frames(x_src)
    first = np.asarray(x_edit_1, dtype=np.float32)
    if first.shape != x.shape[1:]:
        raise ShapeError(f"edited frame {first.shape} does not match source frames {x.shape[1:]}")
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    # + 0.0 turns the -0.0 produced by beta = 0 into +0.0
    padded = np.float32(beta) * x[1:] + np.float32(0.0)
    return Condition(first, padded, token)


def build_source_condition(x_src, token: int) -> Condition:
    x = _frames(x_src)
    return Condition(x[0].copy(), np.zeros_like(x[1:]), token)
