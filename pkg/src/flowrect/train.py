"""Flow-matching training loop for the toy network."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .data import SyntheticDataset
from .errors import DomainError, ShapeError, TrainingError
from .model import (
    ModelCheckpoint,
    ToyArch,
    ToyFlowNet,
    forward_toy_network,
    init_parameters,
    save_checkpoint,
)
from .tensors import rng_stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 8
    steps: int = 2000
    dropout: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    checkpoint_interval: int = 500
    probe_size: int = 32

    def __post_init__(self):
        if not self.lr >= 0:
            raise DomainError(f"learning rate must be >= 0, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.steps < 0 or self.checkpoint_interval < 1:
            raise DomainError("batch_size and checkpoint_interval must be >= 1, steps >= 0")


def sample_timesteps(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform on (0, 1]."""
    return 1.0 - rng.random(n)


def flow_matching_loss(params, arch: ToyArch, x0, conds, t, eps) -> torch.Tensor:
    """Mean squared error between ``v(z_t, t, c)`` and ``eps - x0`` on a batch.

    ``x0`` and ``eps`` are ``[B, L, C, H, W]``; ``t`` has one entry per clip.
    """
    dtype = next(iter(params.values())).dtype
    x0 = torch.as_tensor(np.asarray(x0), dtype=dtype)
    eps = torch.as_tensor(np.asarray(eps), dtype=dtype)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ in shape")
    t_arr = np.asarray(t, dtype=np.float64).reshape(-1)
    if np.any(t_arr <= 0) or np.any(t_arr > 1):
        raise DomainError("training timesteps must lie in (0, 1]")
    tt = torch.as_tensor(t_arr, dtype=dtype).reshape(-1, 1, 1, 1, 1)
    z = (1 - tt) * x0 + tt * eps
    v = forward_toy_network(params, arch, z, t_arr, conds)
    return torch.mean((v - (eps - x0)) ** 2)


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    losses: list[float]
    probe_losses: list[tuple[int, float]] = field(default_factory=list)

    def write_loss_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss"])
            for i, loss in enumerate(self.losses):
                w.writerow([i, repr(loss)])


class _Batch:
    def __init__(self, dataset, rng, size, dropout):
        idx = rng.integers(len(dataset), size=size)
        clips = [dataset[int(i)] for i in idx]
        self.x0 = np.stack([c.frames.frames for c in clips])
        self.t = sample_timesteps(rng, size)
        self.eps = rng.standard_normal(self.x0.shape, dtype=np.float32)
        drop = rng.random(size) < dropout
        self.conds = [c.condition().unconditional() if d else c.condition() for c, d in zip(clips, drop)]


def train(
    arch: ToyArch,
    dataset: SyntheticDataset,
    cfg: TrainConfig,
    out_dir=None,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Adam on the flow-matching loss; deterministic in ``cfg.seed``.

    ``losses`` holds the minibatch loss of every step.  ``probe_losses`` is the
    loss on one fixed batch (drawn once, conditions kept), evaluated at step 0,
    every ``checkpoint_interval`` steps and at the end; it is the noise-free
    curve used to judge convergence.
    """
    if len(dataset) == 0:
        raise DomainError("dataset is empty")
    torch.set_num_threads(1)
    net = ToyFlowNet(arch)
    init_parameters(net, cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    rng = rng_stream(cfg.seed, "train.batch")
    probe = _Batch(dataset, rng_stream(cfg.seed, "train.probe"), cfg.probe_size, 0.0)

    def probe_loss() -> float:
        with torch.no_grad():
            return float(flow_matching_loss(dict(net.named_parameters()), arch, probe.x0, probe.conds, probe.t, probe.eps))

    losses: list[float] = []
    probes = [(0, probe_loss())]
    out_dir = Path(out_dir) if out_dir is not None else None
    for step in range(cfg.steps):
        batch = _Batch(dataset, rng, cfg.batch_size, cfg.dropout)
        loss = flow_matching_loss(dict(net.named_parameters()), arch, batch.x0, batch.conds, batch.t, batch.eps)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value}", step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
        done = step + 1
        if done % cfg.checkpoint_interval == 0 or done == cfg.steps:
            probes.append((done, probe_loss()))
            log.info("step %d loss %.5f probe %.5f", done, value, probes[-1][1])
            if out_dir is not None:
                save_checkpoint(out_dir / "checkpoint.frct", _checkpoint(net, arch, done, cfg))
    ckpt = _checkpoint(net, arch, cfg.steps, cfg)
    return TrainResult(ckpt, losses, probes)


def _checkpoint(net: ToyFlowNet, arch: ToyArch, step: int, cfg: TrainConfig) -> ModelCheckpoint:
    params = {k: v.detach().numpy().astype(np.float32).copy() for k, v in net.named_parameters()}
    return ModelCheckpoint(arch, params, step, cfg.seed, {"kind": "adam", **asdict(cfg)})


__all__ = [
    "TrainConfig",
    "TrainResult",
    "flow_matching_loss",
    "sample_timesteps",
    "train",
]
