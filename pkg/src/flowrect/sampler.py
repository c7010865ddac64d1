"""Inversion-free editing by two parallel ODEs with a rectified target field.

The source branch follows the straight path ``(1 - t) x_src + t eps`` whose
velocity ``v_gt = eps - x_src`` is known exactly.  At every step the model's
source prediction is compared with ``v_gt`` and the difference, scaled by
``lam``, is added to the target prediction before the target branch is
stepped.
"""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cache import DEFAULT_DELTA, REFRESH, DeviationCache, cache_report
from .errors import DivergenceError, NumericInputError, ScheduleError, ShapeError
from .model import (
    SOURCE,
    TARGET,
    AnalyticGaussianModel,
    AnalyticGaussianSpec,
    Condition,
    FlowModel,
    VectorFieldEval,
    cfg_evaluate,
    cfg_multiplier,
    evaluate,
)
from .optical_flow import estimate_flow
from .smpi import SmpiConfig, build_source_condition, build_target_condition, correlated_noise, init_boundary, interpolate
from .tensors import FrameSequence, LatentState, NoiseTensor, gaussian_noise, make_schedule

EULER = "euler"
HEUN = "heun"
NOISE_PURPOSE = "edit.noise"


@dataclass(frozen=True)
class EditConfig:
    lam: float = 1.0
    guidance_scale: float = 5.0
    smpi: SmpiConfig = field(default_factory=SmpiConfig)
    cache_delta: float | None = DEFAULT_DELTA
    num_steps: int = 25
    seed: int = 0
    solver: str = EULER
    schedule: str = "linear"
    # guide the source branch with the same scale as the target branch
    source_guidance: bool = False
    # Heun corrector: hold the predictor's source deviation, or re-evaluate the source at t - dt
    heun_source: str = "hold"
    divergence_limit: float = 1e4

    def __post_init__(self):
        for name in ("lam", "guidance_scale", "divergence_limit"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.cache_delta is not None and not self.cache_delta >= 0:
            raise ValueError(f"cache_delta must be >= 0 or None, got {self.cache_delta}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.solver not in (EULER, HEUN):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.heun_source not in ("refresh", "hold"):
            raise ValueError(f"heun_source must be 'refresh' or 'hold', got {self.heun_source!r}")

    def with_(self, **changes) -> "EditConfig":
        smpi_keys = {"t_max", "beta", "alpha", "recursive"}
        smpi = {k: changes.pop(k) for k in list(changes) if k in smpi_keys}
        if smpi:
            changes["smpi"] = replace(self.smpi, **smpi)
        return replace(self, **changes)


@dataclass(frozen=True)
class StepRecord:
    step: int
    t: float
    dt: float
    tar_norm: float
    src_norm: float
    cache_hit: bool
    d_cum: float
    src_evals: int  # cumulative
    tar_evals: int  # cumulative


@dataclass
class EditTrace:
    records: list[StepRecord] = field(default_factory=list)
    src_evals: int = 0
    tar_evals: int = 0
    uncached_src_evals: int = 0
    wall_time: float = 0.0
    noise_digest: str = ""

    CSV_COLUMNS = ("step", "t", "dt", "cache_hit", "d_cum", "src_evals", "tar_evals")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.CSV_COLUMNS)
            for r in self.records:
                w.writerow([r.step, repr(r.t), repr(r.dt), int(r.cache_hit), repr(r.d_cum), r.src_evals, r.tar_evals])
            # cache summary as trailing comment lines
            rep = cache_report(self)
            for name in ("hits", "hit_rate", "reduction"):
                f.write(f"# {name},{getattr(rep, name)!r}\n")


def rectify(v_tar, v_gt, v_src, lam: float) -> VectorFieldEval:
    """``v_tar + lam * (v_gt - v_src)``."""
    vt, vg, vs = (_vec(v) for v in (v_tar, v_gt, v_src))
    if not vt.shape == vg.shape == vs.shape:
        raise ShapeError(f"shapes differ: {vt.shape}, {vg.shape}, {vs.shape}")
    t = v_tar.t if isinstance(v_tar, VectorFieldEval) else 0.0
    return VectorFieldEval(vt + np.float32(lam) * (vg - vs), t, TARGET)


def _vec(v) -> np.ndarray:
    return v.v if isinstance(v, VectorFieldEval) else np.asarray(v, dtype=np.float32)


def _next_time(z: LatentState, dt: float) -> float:
    if not dt > 0:
        raise ScheduleError(f"step width must be positive, got {dt}")
    t_next = z.t - dt
    if t_next < -1e-12:
        raise ScheduleError(f"step of {dt} from t={z.t} passes below 0")
    return max(t_next, 0.0) if abs(t_next) > 1e-12 else 0.0


def solver_step(kind: str, z: LatentState, v, dt: float, v_pred=None) -> LatentState:
    """Advance ``z`` from ``t`` to ``t - dt``.

    ``euler``: ``z - dt * v``.  ``heun``: ``z - dt * (v + v_pred) / 2`` where
    ``v_pred`` is the field evaluated at :func:`heun_predict`'s point.
    """
    t_next = _next_time(z, dt)
    v = _vec(v)
    d = np.float32(dt)
    if kind == EULER:
        return LatentState(z.z - d * v, t_next)
    if kind == HEUN:
        if v_pred is None:
            raise ValueError("heun needs the field at the predictor point")
        return LatentState(z.z - d * ((v + _vec(v_pred)) * np.float32(0.5)), t_next)
    raise ValueError(f"unknown solver {kind!r}")


def heun_predict(z: LatentState, v, dt: float) -> LatentState:
    """Predictor phase of Heun: an Euler step whose endpoint is re-evaluated by the caller."""
    return solver_step(EULER, z, v, dt)


def _guard(z: np.ndarray, step: int, lam: float, limit: float) -> None:
    if not np.all(np.isfinite(z)):
        raise DivergenceError("non-finite latent", step, lam)
    if np.abs(z).max() > limit:
        raise DivergenceError(f"latent magnitude exceeded {limit:g}", step, lam)


def noise_digest(eps: NoiseTensor) -> str:
    return hashlib.sha256(np.ascontiguousarray(eps.eps, dtype="<f4").tobytes()).hexdigest()


def prepare_noise(x_src: np.ndarray, cfg: EditConfig) -> tuple[NoiseTensor, NoiseTensor]:
    """Raw i.i.d. noise and its flow-correlated version for ``x_src``."""
    eps = gaussian_noise(x_src.shape, cfg.seed, NOISE_PURPOSE)
    if x_src.shape[0] < 2 or cfg.smpi.alpha == 1.0:
        return eps, eps
    flow = estimate_flow(x_src)
    return eps, correlated_noise(eps, flow, cfg.smpi.alpha, cfg.smpi.recursive)


def edit(
    model: FlowModel,
    x_src,
    x_edit_1,
    tokens: tuple[int, int],
    cfg: EditConfig = EditConfig(),
    clamp: bool = True,
):
    """Propagate an edited first frame through the source video.

    Returns ``(x_tar, trace)``: a :class:`FrameSequence` when ``clamp`` is true
    (values clipped to [-1, 1] once, after integration), otherwise the raw
    float32 end state.
    """
    started = time.perf_counter()
    x = x_src.frames if isinstance(x_src, FrameSequence) else np.asarray(x_src, dtype=np.float32)
    src_token, tar_token = tokens
    eps, eps_m = prepare_noise(x, cfg)
    trace = EditTrace(noise_digest=noise_digest(eps))

    z_tar = init_boundary(x, eps_m, cfg.smpi.t_max)
    v_gt = (eps_m.eps - x).astype(np.float32)
    c_tar = build_target_condition(x_edit_1, x, cfg.smpi.beta, tar_token)
    c_src = build_source_condition(x, src_token)
    schedule = make_schedule(cfg.schedule, cfg.smpi.t_max, cfg.num_steps)

    s = cfg.guidance_scale
    tar_cost = cfg_multiplier(s)
    src_scale = s if cfg.source_guidance else 1.0
    src_cost = cfg_multiplier(src_scale)
    use_source = cfg.lam != 0.0
    cache = DeviationCache(cfg.cache_delta)

    def target_field(z, t) -> np.ndarray:
        trace.tar_evals += tar_cost
        return cfg_evaluate(model, z, t, c_tar, s).v

    def source_field(t) -> np.ndarray:
        trace.src_evals += src_cost
        z_src = interpolate(x, eps_m.eps, t)
        if src_scale == 1.0:
            return evaluate(model, z_src, t, c_src, SOURCE).v
        return cfg_evaluate(model, z_src, t, c_src, src_scale).v

    k = 0
    try:
        for k, (t, t_next) in enumerate(schedule.pairs()):
            dt = t - t_next
            heun_step = cfg.solver == HEUN and t_next > 0.0
            v_tar = target_field(z_tar, t)
            hit = False
            if use_source:
                trace.uncached_src_evals += src_cost * (2 if heun_step and cfg.heun_source == "refresh" else 1)
                if cache.step(t, v_tar) == REFRESH:
                    v_src = source_field(t)
                    cache.store(t, v_src)
                else:
                    v_src = cache.cached
                    hit = True
                v = rectify(v_tar, v_gt, v_src, cfg.lam).v
            else:
                v_src = np.zeros_like(v_tar)
                v = v_tar

            if heun_step:
                z_pred = heun_predict(z_tar, v, dt)
                _guard(z_pred.z, k, cfg.lam, cfg.divergence_limit)
                v2 = target_field(z_pred, t_next)
                if use_source:
                    v2_src = source_field(t_next) if (not hit and cfg.heun_source == "refresh") else v_src
                    v2 = rectify(v2, v_gt, v2_src, cfg.lam).v
                z_tar = solver_step(HEUN, z_tar, v, dt, v2)
            else:
                z_tar = solver_step(EULER, z_tar, v, dt)
            _guard(z_tar.z, k, cfg.lam, cfg.divergence_limit)

            trace.records.append(
                StepRecord(
                    step=k,
                    t=t,
                    dt=dt,
                    tar_norm=_rms(v_tar),
                    src_norm=_rms(v_src),
                    cache_hit=hit,
                    d_cum=cache.state.d_cum,
                    src_evals=trace.src_evals,
                    tar_evals=trace.tar_evals,
                )
            )
    except NumericInputError as exc:
        raise DivergenceError(f"non-finite values ({exc})", k, cfg.lam) from None

    trace.wall_time = time.perf_counter() - started
    if clamp:
        return FrameSequence(np.clip(z_tar.z, -1.0, 1.0)), trace
    return np.array(z_tar.z), trace


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(v, dtype=np.float64))))


def sample(model: FlowModel, cond: Condition, shape, cfg: EditConfig = EditConfig(), clamp: bool = True):
    """Plain conditional generation from pure noise (no source video involved).

    Uses the same noise stream, schedule and solver as :func:`edit`, so that
    ``edit`` with ``lam=0, beta=0, alpha=1, t_max=1`` reproduces it bit for bit.
    """
    eps = gaussian_noise(tuple(shape), cfg.seed, NOISE_PURPOSE)
    z = LatentState(eps.eps, 1.0)
    s = cfg.guidance_scale
    schedule = make_schedule(cfg.schedule, 1.0, cfg.num_steps)
    k = 0
    try:
        for k, (t, t_next) in enumerate(schedule.pairs()):
            dt = t - t_next
            v = cfg_evaluate(model, z, t, cond, s).v
            if cfg.solver == HEUN and t_next > 0.0:
                v2 = cfg_evaluate(model, heun_predict(z, v, dt), t_next, cond, s).v
                z = solver_step(HEUN, z, v, dt, v2)
            else:
                z = solver_step(EULER, z, v, dt)
            _guard(z.z, k, 0.0, cfg.divergence_limit)
    except NumericInputError as exc:
        raise DivergenceError(f"non-finite values ({exc})", k, 0.0) from None
    if clamp:
        return FrameSequence(np.clip(z.z, -1.0, 1.0))
    return np.array(z.z)


def edit_gaussian_analytic(
    src_spec: AnalyticGaussianSpec, tar_spec: AnalyticGaussianSpec, x_src, cfg: EditConfig = EditConfig()
) -> np.ndarray:
    """Edit a sample of ``N(mu_src, s2)`` towards ``N(mu_tar, s2)`` with exact fields.

    Returns the unclamped end state; with ``lam = 1`` it approaches the
    transport map ``x_src + (mu_tar - mu_src)``.
    """
    if src_spec.variance != tar_spec.variance:
        raise ValueError(
            f"equal variances required for the transport comparison, got {src_spec.variance} and {tar_spec.variance}"
        )
    x = np.asarray(x_src, dtype=np.float32)
    if x.ndim != 4:
        x = x.reshape(1, 1, 1, -1)
    model = AnalyticGaussianModel({0: src_spec, 1: tar_spec})
    out, _ = edit(model, x, x[0], (0, 1), cfg.with_(guidance_scale=1.0), clamp=False)
    return out
