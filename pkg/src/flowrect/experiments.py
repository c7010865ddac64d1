"""Ablation table, transport benchmark and cache sweep over the synthetic suite."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .cache import cache_report
from .data import EditCase
from .metrics import MetricsReport, evaluate_video, mean_report
from .model import AnalyticGaussianSpec, FlowModel
from .sampler import EditConfig, edit, edit_gaussian_analytic

ABLATION_COLUMNS = ("setting", "tc", "efc", "ovc", "aec", "mse", "src_evals", "tar_evals", "time")


def ablation_settings(base: EditConfig) -> dict[str, EditConfig]:
    """Six configurations mirroring the component ablation, keyed by row name."""
    return {
        "I2V": base.with_(lam=0.0, beta=0.0, alpha=1.0, t_max=1.0),
        "I2V+Init": base.with_(lam=0.0, beta=0.0, alpha=1.0),
        "w/o VFR-SD": base.with_(lam=0.0),
        "w/o SMPI": base.with_(beta=0.0, alpha=1.0, t_max=1.0),
        "w/o D-Cache": base.with_(cache_delta=None),
        "IF-V2V": base,
    }


@dataclass(frozen=True)
class SuiteResult:
    report: MetricsReport
    src_evals: float
    tar_evals: float
    time: float
    outputs: tuple[np.ndarray, ...]
    reductions: tuple[float, ...] = ()

    def row(self, name: str) -> dict:
        r = self.report
        return {
            "setting": name,
            "tc": r.tc,
            "efc": r.efc,
            "ovc": r.ovc,
            "aec": r.aec,
            "mse": r.mse_vs_reference,
            "src_evals": self.src_evals,
            "tar_evals": self.tar_evals,
            "time": self.time,
        }


def run_suite(model: FlowModel, cases: list[EditCase], cfg: EditConfig) -> SuiteResult:
    reports, outs, src, tar, red = [], [], [], [], []
    started = time.perf_counter()
    for i, case in enumerate(cases):
        # a distinct, reproducible noise stream per case
        out, trace = edit(
            model,
            case.source.frames,
            case.edit_frame,
            (case.src_token, case.tar_token),
            cfg.with_(seed=cfg.seed + i),
        )
        reports.append(evaluate_video(out, case.edit_frame, case.source.frames, case.reference))
        outs.append(out.frames)
        src.append(trace.src_evals)
        tar.append(trace.tar_evals)
        red.append(cache_report(trace).reduction)
    elapsed = (time.perf_counter() - started) / max(len(cases), 1)
    return SuiteResult(mean_report(reports), float(np.mean(src)), float(np.mean(tar)), elapsed, tuple(outs), tuple(red))


def run_ablation(model: FlowModel, cases: list[EditCase], base: EditConfig = EditConfig()) -> dict[str, SuiteResult]:
    return {name: run_suite(model, cases, cfg) for name, cfg in ablation_settings(base).items()}


def cache_sweep(model: FlowModel, cases: list[EditCase], deltas, base: EditConfig = EditConfig()) -> list[dict]:
    """Source-evaluation counts and output drift against the uncached run, per threshold."""
    reference = run_suite(model, cases, base.with_(cache_delta=None))
    rows = []
    for d in deltas:
        res = run_suite(model, cases, base.with_(cache_delta=d))
        mse = float(np.mean([np.mean((a.astype(np.float64) - b) ** 2) for a, b in zip(res.outputs, reference.outputs)]))
        rows.append(
            {
                "delta": d,
                "src_evals": res.src_evals,
                "reduction": 1.0 - res.src_evals / reference.src_evals,
                "mse_vs_uncached": mse,
            }
        )
    return rows


OT_COLUMNS = ("dim", "lambda", "solver", "steps", "x_tar", "expected", "error")


def ot_bench(
    steps=(25, 50, 100, 200, 400),
    lambdas=(0.0, 1.0),
    solvers=("euler", "heun"),
    seed: int = 0,
) -> list[dict]:
    """Edit Gaussian samples between equal-variance Gaussians and compare with the mean shift.

    Cases: scalar ``N(0,1) -> N(2,1)`` from ``x = 0.7``, a 2-D pair, and an
    identity pair (equal means).  Integration starts from pure noise.
    """
    problems = [
        ("1d", 0.0, 2.0, np.array([0.7])),
        ("2d", np.array([0.0, -0.5]), np.array([1.5, 0.5]), np.array([0.3, -0.2])),
        ("1d-identity", 0.5, 0.5, np.array([0.2])),
    ]
    rows = []
    for name, mu_s, mu_t, x in problems:
        expected = x + (np.asarray(mu_t) - np.asarray(mu_s))
        for lam in lambdas:
            for solver in solvers:
                for n in steps:
                    cfg = EditConfig(lam=lam, num_steps=n, solver=solver, cache_delta=None, seed=seed).with_(t_max=1.0)
                    out = edit_gaussian_analytic(
                        AnalyticGaussianSpec(np.broadcast_to(mu_s, x.shape).reshape(1, 1, 1, -1), 1.0),
                        AnalyticGaussianSpec(np.broadcast_to(mu_t, x.shape).reshape(1, 1, 1, -1), 1.0),
                        x,
                        cfg,
                    ).ravel()
                    err = float(np.max(np.abs(out.astype(np.float64) - expected)))
                    rows.append(
                        {
                            "dim": name,
                            "lambda": lam,
                            "solver": solver,
                            "steps": n,
                            "x_tar": " ".join(f"{v:.7g}" for v in out),
                            "expected": " ".join(f"{v:.7g}" for v in expected),
                            "error": err,
                        }
                    )
    return rows


def fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6g}"
    return str(v)
