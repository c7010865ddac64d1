"""Vector-field models ``v(z_t, t, c)`` and classifier-free guidance.

Two realizations share one calling convention (``predict(z, t, cond)`` on a
``[L, C, H, W]`` float32 array):

* :class:`AnalyticGaussianModel` gives the exact field of a Gaussian data
  distribution under the interpolation ``z_t = (1 - t) x0 + t eps``.
* :class:`ToyFlowModel` wraps :class:`ToyFlowNet`, a small convolutional
  network trained with the flow-matching objective.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Protocol

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import DomainError, NumericInputError, ShapeError
from .tensors import FrameSequence, LatentState, NoiseTensor, load_bundle, rng_stream, save_bundle

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True, eq=False)
class Condition:
    """First-frame conditioning, optional padded source frames and a content token."""

    first_frame: np.ndarray
    padded_frames: np.ndarray
    content_token: int
    uncond_flag: bool = False

    def __post_init__(self):
        ff = np.asarray(self.first_frame, dtype=np.float32)
        pf = np.asarray(self.padded_frames, dtype=np.float32)
        if ff.ndim != 3:
            raise ShapeError(f"first_frame must be [C, H, W], got {ff.shape}")
        if pf.ndim != 4 or pf.shape[1:] != ff.shape:
            raise ShapeError(f"padded_frames {pf.shape} do not match first_frame {ff.shape}")
        object.__setattr__(self, "first_frame", ff)
        object.__setattr__(self, "padded_frames", pf)
        object.__setattr__(self, "content_token", int(self.content_token))

    @property
    def num_frames(self) -> int:
        return self.padded_frames.shape[0] + 1

    def unconditional(self) -> "Condition":
        return Condition(self.first_frame, self.padded_frames, self.content_token, uncond_flag=True)

    def frame_slots(self) -> np.ndarray:
        """``[L, C, H, W]`` stack: first frame followed by the padded frames."""
        return np.concatenate([self.first_frame[None], self.padded_frames], axis=0)

    def __eq__(self, other):
        if not isinstance(other, Condition):
            return NotImplemented
        return (
            self.content_token == other.content_token
            and self.uncond_flag == other.uncond_flag
            and np.array_equal(self.first_frame, other.first_frame)
            and np.array_equal(self.padded_frames, other.padded_frames)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class VectorFieldEval:
    v: np.ndarray
    t: float
    branch_tag: str = TARGET

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float32)
        if not np.all(np.isfinite(v)):
            raise NumericInputError(f"non-finite vector field at t={self.t}")
        object.__setattr__(self, "v", v)


class FlowModel(Protocol):
    def predict(self, z: np.ndarray, t: float, cond: Condition) -> np.ndarray: ...


def _as_latent(z) -> np.ndarray:
    if isinstance(z, LatentState):
        return z.z
    return np.asarray(z, dtype=np.float32)


def evaluate(model: FlowModel, z, t: float, c: Condition, branch: str = TARGET) -> VectorFieldEval:
    """Single model evaluation with input validation."""
    z = _as_latent(z)
    if not 0.0 < t <= 1.0:
        raise DomainError(f"model evaluation requires t in (0, 1], got {t}")
    if not np.all(np.isfinite(z)):
        raise NumericInputError(f"non-finite latent passed to the model at t={t}")
    return VectorFieldEval(model.predict(z, float(t), c), float(t), branch)


def cfg_evaluate(model: FlowModel, z, t: float, c: Condition, guidance_scale: float) -> VectorFieldEval:
    """``v_u + s (v_c - v_u)``.

    A scale of exactly 1 returns the conditional prediction untouched and costs
    one model call instead of two.
    """
    if guidance_scale < 0:
        raise DomainError(f"guidance_scale must be >= 0, got {guidance_scale}")
    v_c = evaluate(model, z, t, c)
    if guidance_scale == 1.0:
        return v_c
    v_u = evaluate(model, z, t, c.unconditional())
    s = np.float32(guidance_scale)
    return VectorFieldEval(v_u.v + s * (v_c.v - v_u.v), float(t), TARGET)


def cfg_multiplier(guidance_scale: float) -> int:
    """Model calls per guided evaluation."""
    return 1 if guidance_scale == 1.0 else 2


def ground_truth_vector(x0, eps) -> VectorFieldEval:
    """``eps - x0``: the constant velocity of the straight path through ``x0``."""
    x0 = x0.frames if isinstance(x0, FrameSequence) else np.asarray(x0, dtype=np.float32)
    eps = eps.eps if isinstance(eps, NoiseTensor) else np.asarray(eps, dtype=np.float32)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    return VectorFieldEval(eps - x0, 1.0, SOURCE)


# ------------------------------------------------------------------ analytic


@dataclass(frozen=True)
class AnalyticGaussianSpec:
    """Data distribution ``N(mean, variance * I)``; ``mean`` may be a scalar or an array."""

    mean: float | np.ndarray
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"variance must be positive, got {self.variance}")


def posterior_mean(spec: AnalyticGaussianSpec, z, t: float) -> np.ndarray:
    """``E[x0 | z_t = z]`` for Gaussian data, computed in float64."""
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(spec.mean, dtype=np.float64)
    s2 = float(spec.variance)
    # precision-weighted form multiplied through by t^2 * s2; finite at t = 1
    return (mu * t * t + s2 * (1.0 - t) * z) / (t * t + s2 * (1.0 - t) ** 2)


def analytic_gaussian_field(spec: AnalyticGaussianSpec, z, t: float) -> VectorFieldEval:
    if t <= 0.0:
        raise DomainError("the analytic field is singular at t = 0")
    if t > 1.0:
        raise DomainError(f"t must lie in (0, 1], got {t}")
    zz = np.asarray(_as_latent(z), dtype=np.float64)
    v = (zz - posterior_mean(spec, zz, t)) / t
    return VectorFieldEval(v.astype(np.float32), float(t))


class AnalyticGaussianModel:
    """Closed-form field; ``specs`` maps content token to its Gaussian."""

    def __init__(self, specs: Mapping[int, AnalyticGaussianSpec], uncond: AnalyticGaussianSpec | None = None):
        self.specs = dict(specs)
        self.uncond = uncond

    def predict(self, z, t, cond):
        if cond.uncond_flag:
            if self.uncond is None:
                raise DomainError("this analytic model has no unconditional distribution")
            spec = self.uncond
        else:
            spec = self.specs[cond.content_token]
        return analytic_gaussian_field(spec, z, t).v


# --------------------------------------------------------------- toy network


@dataclass(frozen=True)
class ToyArch:
    """Architecture descriptor; fully determines every parameter shape."""

    channels: int = 3
    hidden: int = 48
    num_classes: int = 4
    time_features: int = 32
    temporal_kernel: int = 3
    kind: str = "toy-conv-v1"

    def to_text(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "ToyArch":
        return cls(**json.loads(text))


def timestep_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of ``1000 * t``; ``t`` has shape ``[B]``."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    ang = 1000.0 * t[:, None] * freqs[None]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class ToyFlowNet(nn.Module):
    """Per-frame 3x3 convolutions with a temporal 1-D convolution across frames.

    Input per frame: the latent, the frame's condition slot (first frame for
    frame 1, padded source frame otherwise) and the first frame again, stacked
    along channels.  Time and content embeddings are added channelwise before
    every hidden nonlinearity.  The output convolution starts at zero.
    """

    def __init__(self, arch: ToyArch):
        super().__init__()
        self.arch = arch
        c, h = arch.channels, arch.hidden
        self.conv_in = nn.Conv2d(3 * c, h, 3, padding=1)
        self.conv_mid = nn.Conv2d(h, h, 3, padding=1)
        self.temporal = nn.Conv1d(h, h, arch.temporal_kernel, padding=arch.temporal_kernel // 2)
        self.conv_late = nn.Conv2d(h, h, 3, padding=1)
        self.conv_out = nn.Conv2d(h, c, 3, padding=1)
        self.time_in = nn.Linear(arch.time_features, h)
        self.time_out = nn.Linear(h, 4 * h)
        # index num_classes is the null token used for the unconditional branch
        self.token = nn.Embedding(arch.num_classes + 1, 4 * h)

    def forward(self, z, t, cond, token):
        """``z``, ``cond``: ``[B, L, C, H, W]`` and ``[B, L, 2C, H, W]``; ``t``, ``token``: ``[B]``."""
        b, l, c, hh, ww = z.shape
        h = self.arch.hidden
        temb = self.time_out(F.silu(self.time_in(timestep_features(t, self.arch.time_features))))
        emb = (temb + self.token(token)).reshape(b, 1, 4, h, 1, 1)
        e = [emb[:, :, k].expand(b, l, h, 1, 1).reshape(b * l, h, 1, 1) for k in range(4)]

        x = torch.cat([z, cond], dim=2).reshape(b * l, 3 * c, hh, ww)
        x = F.silu(self.conv_in(x) + e[0])
        x = F.silu(self.conv_mid(x) + e[1])
        # temporal mixing: [B*L, h, H, W] -> [B*H*W, h, L]
        y = x.reshape(b, l, h, hh, ww).permute(0, 3, 4, 2, 1).reshape(b * hh * ww, h, l)
        y = self.temporal(y).reshape(b, hh, ww, h, l).permute(0, 4, 3, 1, 2).reshape(b * l, h, hh, ww)
        x = x + F.silu(y + e[2])
        x = F.silu(self.conv_late(x) + e[3])
        return self.conv_out(x).reshape(b, l, c, hh, ww)


def init_parameters(net: ToyFlowNet, seed: int) -> None:
    """Deterministic fan-in uniform initialization from a Philox stream; output layer zeroed."""
    rng = rng_stream(seed, "model.init")
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name.startswith("conv_out"):
                p.zero_()
                continue
            if p.ndim == 1:
                fan_in = _fan_in_of_bias(net, name)
            elif name.startswith("token"):
                fan_in = 1
            else:
                fan_in = int(np.prod(p.shape[1:]))
            bound = 1.0 / math.sqrt(fan_in)
            vals = rng.uniform(-bound, bound, size=tuple(p.shape))
            p.copy_(torch.from_numpy(vals).to(p.dtype))


def _fan_in_of_bias(net: nn.Module, name: str) -> int:
    weight = dict(net.named_parameters())[name.rsplit(".", 1)[0] + ".weight"]
    return int(np.prod(weight.shape[1:]))


def condition_tensors(conds, num_classes: int, dtype=torch.float32):
    """Stack conditions into the network's ``cond`` and ``token`` inputs.

    An unconditional entry gets zero condition channels and the null token, so
    its output cannot depend on any field of the condition.
    """
    cond_arrays, tokens = [], []
    for c in conds:
        slots = c.frame_slots()
        first = np.broadcast_to(c.first_frame[None], slots.shape)
        arr = np.concatenate([slots, first], axis=1)
        if c.uncond_flag:
            arr = np.zeros_like(arr)
            tokens.append(num_classes)
        else:
            if not 0 <= c.content_token < num_classes:
                raise DomainError(f"content token {c.content_token} outside [0, {num_classes})")
            tokens.append(c.content_token)
        cond_arrays.append(arr)
    cond = torch.from_numpy(np.stack(cond_arrays)).to(dtype)
    return cond, torch.tensor(tokens, dtype=torch.long)


def forward_toy_network(params: Mapping[str, torch.Tensor], arch: ToyArch, z, t, conds) -> torch.Tensor:
    """Functional forward pass over a batch; ``params`` may require grad."""
    net = _skeleton(arch)
    _check_param_shapes(net, params)
    dtype = next(iter(params.values())).dtype
    z = torch.as_tensor(np.asarray(z), dtype=dtype)
    tt = torch.as_tensor(np.asarray(t, dtype=np.float64).reshape(-1), dtype=dtype)
    cond, token = condition_tensors(conds, arch.num_classes, dtype)
    return torch.func.functional_call(net, dict(params), (z, tt, cond, token))


@functools.lru_cache(maxsize=8)
def _skeleton(arch: ToyArch) -> ToyFlowNet:
    return ToyFlowNet(arch)


def backward_toy_network(params, arch: ToyArch, z, t, conds, grad_output) -> dict[str, torch.Tensor]:
    """Gradient of ``sum(v * grad_output)`` with respect to every parameter."""
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    out = forward_toy_network(leaves, arch, z, t, conds)
    g = torch.as_tensor(np.asarray(grad_output), dtype=out.dtype)
    if g.shape != out.shape:
        raise ShapeError(f"grad_output {tuple(g.shape)} does not match output {tuple(out.shape)}")
    grads = torch.autograd.grad(out, list(leaves.values()), grad_outputs=g, allow_unused=True)
    return {
        k: (gr if gr is not None else torch.zeros_like(leaves[k]))
        for k, gr in zip(leaves, grads)
    }


def _check_param_shapes(net: nn.Module, params: Mapping[str, object]) -> None:
    expected = {k: tuple(v.shape) for k, v in net.named_parameters()}
    got = {k: tuple(np.shape(v)) for k, v in params.items()}
    if expected.keys() != got.keys():
        missing = sorted(expected.keys() - got.keys())
        extra = sorted(got.keys() - expected.keys())
        raise ShapeError(f"parameter names do not match architecture (missing {missing}, unexpected {extra})")
    for k, shape in expected.items():
        if got[k] != shape:
            raise ShapeError(f"parameter {k} has shape {got[k]}, architecture requires {shape}")


def count_parameters(arch: ToyArch) -> int:
    return sum(p.numel() for p in _skeleton(arch).parameters())


@dataclass
class ModelCheckpoint:
    arch: ToyArch
    params: dict[str, np.ndarray]
    step: int = 0
    seed: int = 0
    optimizer: dict = field(default_factory=dict)

    def descriptor(self) -> str:
        return json.dumps(
            {"arch": json.loads(self.arch.to_text()), "step": self.step, "seed": self.seed, "optimizer": self.optimizer},
            sort_keys=True,
        )


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    save_bundle(path, {k: np.asarray(v, dtype=np.float32) for k, v in ckpt.params.items()}, ckpt.descriptor())


def load_checkpoint(path) -> ModelCheckpoint:
    tensors, text = load_bundle(path)
    meta = json.loads(text)
    arch = ToyArch(**meta["arch"])
    _check_param_shapes(ToyFlowNet(arch), tensors)
    return ModelCheckpoint(arch, tensors, int(meta["step"]), int(meta["seed"]), meta.get("optimizer", {}))


class ToyFlowModel:
    """Inference wrapper: numpy in, numpy out, parameters frozen."""

    def __init__(self, net: ToyFlowNet):
        self.net = net.eval()
        self.arch = net.arch
        for p in self.net.parameters():
            p.requires_grad_(False)

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "ToyFlowModel":
        net = ToyFlowNet(ckpt.arch)
        with torch.no_grad():
            for name, p in net.named_parameters():
                p.copy_(torch.from_numpy(np.asarray(ckpt.params[name])))
        return cls(net)

    @classmethod
    def initialized(cls, arch: ToyArch, seed: int = 0) -> "ToyFlowModel":
        net = ToyFlowNet(arch)
        init_parameters(net, seed)
        return cls(net)

    def checkpoint(self, step: int = 0, seed: int = 0) -> ModelCheckpoint:
        params = {k: v.detach().numpy().astype(np.float32).copy() for k, v in self.net.named_parameters()}
        return ModelCheckpoint(self.arch, params, step, seed)

    def predict(self, z, t, cond):
        z = np.asarray(z, dtype=np.float32)
        if z.ndim != 4 or z.shape[1] != self.arch.channels:
            raise ShapeError(f"latent shape {z.shape} incompatible with {self.arch.channels}-channel model")
        if cond.num_frames != z.shape[0] or cond.first_frame.shape != z.shape[1:]:
            raise ShapeError(f"condition does not match latent shape {z.shape}")
        c, tok = condition_tensors([cond], self.arch.num_classes)
        with torch.no_grad():
            out = self.net(torch.from_numpy(z[None].copy()), torch.tensor([t], dtype=torch.float32), c, tok)
        return out[0].numpy()
