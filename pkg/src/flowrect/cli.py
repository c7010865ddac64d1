"""``flowrect`` command line.

Every subcommand writes a ``*.manifest.json`` next to its outputs recording
the fully resolved configuration, input and output SHA-256 digests, seeds and
per-phase wall time.  ``flowrect rerun MANIFEST`` replays the recorded command
and checks that the outputs hash identically.

Settings come from flags, then from an optional INI file (``--config``), then
from built-in defaults.  Sections are ``[data]``, ``[train]`` and ``[edit]``;
keys are the flag names with dashes replaced by underscores.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .cache import DEFAULT_DELTA, cache_report, parse_delta
from .data import MOTIONS, SHAPES, SyntheticDataset, SyntheticDatasetSpec, make_edit_suite
from .errors import DivergenceError, FlowrectError, SetupError, TensorFormatError, TrainingError
from .experiments import ABLATION_COLUMNS, OT_COLUMNS, cache_sweep, fmt, ot_bench, run_ablation
from .metrics import evaluate_video, write_report_csv
from .model import ToyArch, ToyFlowModel, load_checkpoint, save_checkpoint
from .optical_flow import flow_magnitude_image
from .sampler import EditConfig, edit
from .smpi import SmpiConfig
from .tensors import FrameSequence, atomic_write, encode_pnm, export_frames, load_bundle, load_tensor, save_bundle, save_tensor
from .train import TrainConfig, train

log = logging.getLogger("flowrect")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DIVERGENCE = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- params


@dataclass(frozen=True)
class Param:
    key: str
    type: Callable[[str], Any]
    default: Any
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in str(text).split(",") if s.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _delta(text):
    return parse_delta(str(text))


DATA_PARAMS = [
    Param("motions", _csv_list, ("translate", "bounce"), f"comma list from {','.join(MOTIONS)}"),
    Param("shapes", _csv_list, SHAPES, f"comma list from {','.join(SHAPES)}"),
    Param("size", int, 16, "frame height and width in pixels"),
    Param("frames", int, 8, "frames per clip"),
    Param("channels", int, 3),
    Param("classes", int, 4, "number of content classes (colours)"),
    Param("shape_size", int, 6),
    Param("max_speed", int, 2, "pixels per frame"),
    Param("num_clips", int, 64, "training clips"),
    Param("data_seed", int, 0),
    Param("num_edits", int, 24, "held-out editing cases"),
    Param("edit_seed", int, 1),
]

TRAIN_PARAMS = [
    Param("lr", float, 2e-3),
    Param("batch_size", int, 8),
    Param("train_steps", int, 3000),
    Param("dropout", float, 0.1, "condition dropout probability"),
    Param("seed", int, 0),
    Param("beta1", float, 0.9),
    Param("beta2", float, 0.999),
    Param("checkpoint_interval", int, 500),
    Param("probe_size", int, 32),
    Param("hidden", int, 32),
    Param("time_features", int, 32),
]

EDIT_PARAMS = [
    Param("lambda", float, 1.0, "rectification scale"),
    Param("guidance", float, 5.0, "classifier-free guidance scale (target branch)"),
    Param("t_max", float, SmpiConfig().t_max),
    Param("beta", float, SmpiConfig().beta, "embedding scale of padded source frames"),
    Param("alpha", float, SmpiConfig().alpha, "noise blending factor"),
    Param("delta", _delta, DEFAULT_DELTA, "cache threshold: real, 'inf' or 'off'"),
    Param("steps", int, 25),
    Param("solver", str, "euler", "euler or heun"),
    Param("seed", int, 0),
    Param("schedule", str, "linear", "linear or shifted"),
    Param("source_guidance", _bool, False),
    Param("heun_source", str, "hold", "hold or refresh"),
    Param("recursive", _bool, False, "warp the modulated previous noise frame"),
    Param("src_token", int, 0),
    Param("tar_token", int, None, "defaults to --src-token"),
]


def add_params(parser: argparse.ArgumentParser, params: list[Param], skip=()) -> None:
    for p in params:
        if p.key in skip:
            continue
        # default None marks "not given on the command line"
        parser.add_argument(p.flag, dest=p.key, default=None, help=p.help or None)


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path)
    return cp


def resolve(args, params: list[Param], cp: configparser.ConfigParser, section: str) -> dict:
    """Flag value if given, else config-file value, else the default."""
    out = {}
    for p in params:
        raw = getattr(args, p.key, None)
        if raw is None and cp.has_option(section, p.key):
            raw = cp.get(section, p.key)
        try:
            out[p.key] = p.default if raw is None else p.type(raw)
        except ValueError as exc:
            raise UsageError(f"invalid value for {p.flag}: {exc}") from None
    return out


def dataset_spec(d: dict) -> SyntheticDatasetSpec:
    return SyntheticDatasetSpec(
        motions=tuple(d["motions"]),
        shapes=tuple(d["shapes"]),
        size=d["size"],
        frames=d["frames"],
        channels=d["channels"],
        num_classes=d["classes"],
        shape_size=d["shape_size"],
        max_speed=d["max_speed"],
        num_clips=d["num_clips"],
        seed=d["data_seed"],
    )


def edit_config(d: dict) -> EditConfig:
    if d["solver"] not in ("euler", "heun"):
        raise UsageError(f"--solver must be euler or heun, got {d['solver']!r}")
    try:
        return EditConfig(
            lam=d["lambda"],
            guidance_scale=d["guidance"],
            smpi=SmpiConfig(t_max=d["t_max"], beta=d["beta"], alpha=d["alpha"], recursive=d["recursive"]),
            cache_delta=d["delta"],
            num_steps=d["steps"],
            seed=d["seed"],
            solver=d["solver"],
            schedule=d["schedule"],
            source_guidance=d["source_guidance"],
            heun_source=d["heun_source"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def train_config(d: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lr=d["lr"],
            batch_size=d["batch_size"],
            steps=d["train_steps"],
            dropout=d["dropout"],
            seed=d["seed"],
            beta1=d["beta1"],
            beta2=d["beta2"],
            checkpoint_interval=d["checkpoint_interval"],
            probe_size=d["probe_size"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ----------------------------------------------------------------- manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, argv: list[str]):
        self.command = command
        self.argv = list(argv)
        self.config: dict = {}
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.seeds: dict[str, int] = {}
        self.timings: dict[str, float] = {}
        self.extra: dict = {}

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - start, 6)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "tool": "flowrect",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings": self.timings,
            **self.extra,
        }

    def write(self, path) -> Path:
        path = Path(path)
        atomic_write(path, (json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n").encode())
        return path


def _json_default(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o)}")


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


# ----------------------------------------------------------------- commands


def cmd_gen_data(args, argv) -> int:
    cp = read_config(args.config)
    d = resolve(args, DATA_PARAMS, cp, "data")
    try:
        spec = dataset_spec(d)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out_dir)
    m = Manifest("gen-data", argv)
    m.config = {"data": _jsonable(d)}
    m.seeds = {"data_seed": d["data_seed"], "edit_seed": d["edit_seed"]}
    with m.phase("generate"):
        cases = make_edit_suite(spec, d["num_edits"], d["edit_seed"])
    with m.phase("write"):
        out.mkdir(parents=True, exist_ok=True)
        index = []
        for i, case in enumerate(cases):
            cdir = out / f"case_{i:03d}"
            files = {
                "src": cdir / "src.frct",
                "edit_frame": cdir / "edit_frame.frct",
                "reference": cdir / "reference.frct",
                "flow": cdir / "flow.frct",
            }
            save_tensor(files["src"], case.source.frames)
            save_tensor(files["edit_frame"], case.edit_frame)
            save_tensor(files["reference"], case.reference)
            save_bundle(files["flow"], {"FLOW": case.source.flow}, json.dumps({"kind": "ground-truth-flow"}))
            if args.previews:
                export_frames(case.source.frames, cdir / "preview", "src")
                export_frames(case.reference, cdir / "preview", "reference")
            for p in files.values():
                m.add_output(p)
            index.append(
                {
                    "case": i,
                    "dir": cdir.name,
                    "src_token": case.src_token,
                    "tar_token": case.tar_token,
                    "motion": case.source.motion,
                    "shape": case.source.shape,
                }
            )
        idx = out / "suite.json"
        atomic_write(idx, (json.dumps({"data": _jsonable(d), "cases": index}, indent=2) + "\n").encode())
        m.add_output(idx)
    m.write(out / "gen-data.manifest.json")
    print(f"wrote {len(cases)} editing cases to {out}")
    return EXIT_OK


def load_suite(directory):
    """Read a ``gen-data`` directory back into editing cases."""
    from .data import Clip, EditCase

    directory = Path(directory)
    index_path = directory / "suite.json"
    if not index_path.is_file():
        raise SetupError(f"no suite.json in {directory}")
    index = json.loads(index_path.read_text())
    cases = []
    for entry in index["cases"]:
        cdir = directory / entry["dir"]
        src = FrameSequence(load_tensor(cdir / "src.frct"))
        flow = load_bundle(cdir / "flow.frct")[0]["FLOW"]
        clip = Clip(src, flow, entry["src_token"], entry["motion"], entry["shape"], masks=np.zeros(0, bool))
        ref = FrameSequence(load_tensor(cdir / "reference.frct"))
        cases.append(EditCase(clip, load_tensor(cdir / "edit_frame.frct"), entry["src_token"], entry["tar_token"], ref))
    return cases, index, [index_path] + [directory / e["dir"] / n for e in index["cases"] for n in ("src.frct", "edit_frame.frct", "reference.frct")]


def _load_model(path, m: Manifest) -> ToyFlowModel:
    if path is None:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise SetupError(f"checkpoint not found: {path}")
    m.add_input(path)
    return ToyFlowModel.from_checkpoint(load_checkpoint(path))


def cmd_train(args, argv) -> int:
    cp = read_config(args.config)
    d = resolve(args, DATA_PARAMS, cp, "data")
    tr = resolve(args, TRAIN_PARAMS, cp, "train")
    if args.data is not None:
        suite = Path(args.data) / "suite.json"
        if not suite.is_file():
            raise SetupError(f"no suite.json in {args.data}")
        # the dataset definition recorded by gen-data, with command-line flags still winning
        recorded = json.loads(suite.read_text())["data"]
        for p in DATA_PARAMS:
            if getattr(args, p.key, None) is None and p.key in recorded:
                d[p.key] = p.type(",".join(recorded[p.key]) if isinstance(recorded[p.key], list) else recorded[p.key])
    spec = dataset_spec(d)
    cfg = train_config(tr)
    arch = ToyArch(
        channels=spec.channels, hidden=tr["hidden"], num_classes=spec.num_classes, time_features=tr["time_features"]
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = Manifest("train", argv)
    m.config = {"data": _jsonable(d), "train": _jsonable(tr), "arch": asdict(arch)}
    m.seeds = {"seed": cfg.seed, "data_seed": spec.seed}
    with m.phase("dataset"):
        ds = SyntheticDataset(spec)
    with m.phase("train"):
        result = train(arch, ds, cfg)
    ckpt_path, loss_path, probe_path = out / "checkpoint.frct", out / "loss.csv", out / "probe_loss.csv"
    save_checkpoint(ckpt_path, result.checkpoint)
    result.write_loss_csv(loss_path)
    write_csv(probe_path, ("step", "loss"), [{"step": s, "loss": v} for s, v in result.probe_losses])
    for p in (ckpt_path, loss_path, probe_path):
        m.add_output(p)
    m.extra["probe_losses"] = result.probe_losses
    m.write(out / "train.manifest.json")
    first, last = result.probe_losses[0][1], result.probe_losses[-1][1]
    print(f"trained {cfg.steps} steps: probe loss {first:.5f} -> {last:.5f}")
    return EXIT_OK


def cmd_edit(args, argv) -> int:
    if args.no_cache and args.delta is not None and parse_delta(args.delta) is not None:
        raise UsageError("conflicting flags: --no-cache and --delta " + args.delta)
    if args.src is None:
        raise UsageError("--src is required")
    if args.edit_frame is None:
        raise UsageError("--edit-frame is required")
    if args.out is None:
        raise UsageError("--out is required")
    cp = read_config(args.config)
    d = resolve(args, EDIT_PARAMS, cp, "edit")
    if args.no_cache:
        d["delta"] = None
    if d["tar_token"] is None:
        d["tar_token"] = d["src_token"]
    cfg = edit_config(d)
    out = Path(args.out)
    m = Manifest("edit", argv)
    m.config = {"edit": _jsonable(d)}
    m.seeds = {"seed": cfg.seed}
    model = _load_model(args.checkpoint, m)
    with m.phase("load"):
        x_src = FrameSequence(load_tensor(args.src))
        x_edit = load_tensor(args.edit_frame)
        m.add_input(args.src)
        m.add_input(args.edit_frame)
    with m.phase("edit"):
        x_tar, trace = edit(model, x_src, x_edit, (d["src_token"], d["tar_token"]), cfg)
    save_tensor(out, x_tar)
    m.add_output(out)
    if args.trace:
        trace.write_csv(args.trace)
        m.add_output(args.trace)
    if args.previews:
        for p in export_frames(x_tar, args.previews, out.stem):
            m.add_output(p)
    if args.flow_preview:
        from .optical_flow import estimate_flow

        mags = flow_magnitude_image(estimate_flow(x_src))
        for i, mag in enumerate(mags):
            p = Path(args.flow_preview) / f"flow_{i:03d}.pgm"
            atomic_write(p, encode_pnm(mag))
            m.add_output(p)
    rep = cache_report(trace)
    m.extra["noise_digest"] = trace.noise_digest
    m.extra["cache"] = asdict(rep)
    m.extra["evals"] = {"source": trace.src_evals, "target": trace.tar_evals}
    m.write(out.with_suffix(".manifest.json"))
    print(f"wrote {out}  (source evals {trace.src_evals}, target evals {trace.tar_evals})")
    for line in rep.lines():
        print("  " + line)
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    for name in ("video", "edit_frame", "src"):
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
    m = Manifest("eval", argv)
    with m.phase("eval"):
        video = load_tensor(args.video)
        x_edit = load_tensor(args.edit_frame)
        x_src = load_tensor(args.src)
        ref = load_tensor(args.reference) if args.reference else None
        report = evaluate_video(video, x_edit, x_src, ref)
    for p in (args.video, args.edit_frame, args.src, args.reference):
        if p:
            m.add_input(p)
    print(report.table())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_report_csv(args.out, report)
        m.add_output(args.out)
        m.write(Path(args.out).with_suffix(".manifest.json"))
    return EXIT_OK


def _suite_cases(args, m: Manifest, cp):
    if args.data is not None:
        cases, _, files = load_suite(args.data)
        for p in files:
            m.add_input(p)
        return cases
    d = resolve(args, DATA_PARAMS, cp, "data")
    m.config["data"] = _jsonable(d)
    return make_edit_suite(dataset_spec(d), d["num_edits"], d["edit_seed"])


def cmd_ablate(args, argv) -> int:
    cp = read_config(args.config)
    m = Manifest("ablate", argv)
    model = _load_model(args.checkpoint, m)
    d = resolve(args, EDIT_PARAMS, cp, "edit")
    base = edit_config(d)
    m.config["edit"] = _jsonable(d)
    m.seeds = {"seed": base.seed}
    cases = _suite_cases(args, m, cp)
    with m.phase("ablate"):
        results = run_ablation(model, cases, base)
    out = Path(args.out_dir)
    rows = [res.row(name) for name, res in results.items()]
    # wall time is machine dependent; it goes to a separate file so the table hashes stably
    write_csv(out / "ablation.csv", ABLATION_COLUMNS[:-1], rows)
    write_csv(out / "ablation_time.csv", ("setting", "time"), rows)
    m.add_output(out / "ablation.csv")
    m.write(out / "ablate.manifest.json")
    _print_table(ABLATION_COLUMNS, rows)
    return EXIT_OK


def cmd_ot_bench(args, argv) -> int:
    m = Manifest("ot-bench", argv)
    steps = tuple(int(s) for s in _csv_list(args.step_counts))
    lambdas = tuple(float(s) for s in _csv_list(args.lambdas))
    solvers = _csv_list(args.solvers)
    m.config = {"steps": steps, "lambdas": lambdas, "solvers": solvers, "seed": args.seed}
    with m.phase("bench"):
        rows = ot_bench(steps, lambdas, solvers, seed=args.seed)
    out = Path(args.out_dir)
    write_csv(out / "ot_bench.csv", OT_COLUMNS, rows)
    m.add_output(out / "ot_bench.csv")
    m.write(out / "ot-bench.manifest.json")
    _print_table(OT_COLUMNS, rows)
    return EXIT_OK


def cmd_cache_bench(args, argv) -> int:
    cp = read_config(args.config)
    m = Manifest("cache-bench", argv)
    model = _load_model(args.checkpoint, m)
    d = resolve(args, EDIT_PARAMS, cp, "edit")
    base = edit_config(d)
    deltas = [parse_delta(s) for s in _csv_list(args.deltas)]
    if any(x is None for x in deltas):
        raise UsageError("--deltas takes real values or 'inf'")
    m.config = {"edit": _jsonable(d), "deltas": [fmt(x) for x in deltas]}
    cases = _suite_cases(args, m, cp)
    with m.phase("sweep"):
        rows = cache_sweep(model, cases, deltas, base)
    out = Path(args.out_dir)
    cols = ("delta", "src_evals", "reduction", "mse_vs_uncached")
    write_csv(out / "cache_bench.csv", cols, rows)
    m.add_output(out / "cache_bench.csv")
    m.write(out / "cache-bench.manifest.json")
    _print_table(cols, rows)
    return EXIT_OK


def cmd_rerun(args, argv) -> int:
    """Replay a manifest's command and compare output digests."""
    manifest = json.loads(Path(args.manifest).read_text())
    # recorded paths are relative to the directory the command ran in
    cwd = Path(manifest.get("cwd", "."))
    here = os.getcwd()
    os.chdir(cwd)
    try:
        code = main(manifest["argv"])
        if code != EXIT_OK:
            return code
        mismatched = []
        for path, digest in manifest["outputs"].items():
            if not Path(path).is_file() or sha256_file(path) != digest:
                mismatched.append(path)
    finally:
        os.chdir(here)
    if mismatched:
        for p in mismatched:
            print(f"digest mismatch: {p}", file=sys.stderr)
        return 1
    print(f"all {len(manifest['outputs'])} output digests reproduced")
    return EXIT_OK


def _print_table(columns, rows) -> None:
    widths = [max(len(c), *(len(fmt(r[c])) for r in rows)) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(fmt(r[c]).ljust(w) for c, w in zip(columns, widths)))


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowrect", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"flowrect {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic editing suite")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--config")
    g.add_argument("--previews", action="store_true", help="also write PPM previews")
    add_params(g, DATA_PARAMS)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the toy flow model")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--config")
    t.add_argument("--data", help="gen-data directory whose dataset definition to use")
    add_params(t, DATA_PARAMS, skip=("num_edits", "edit_seed"))
    add_params(t, TRAIN_PARAMS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("edit", help="edit one clip")
    e.add_argument("--checkpoint")
    e.add_argument("--src")
    e.add_argument("--edit-frame")
    e.add_argument("--out")
    e.add_argument("--trace")
    e.add_argument("--previews", help="directory for PPM previews of the result")
    e.add_argument("--flow-preview", help="directory for PGM flow-magnitude images of the source")
    e.add_argument("--config")
    e.add_argument("--no-cache", action="store_true", help="same as --delta off")
    add_params(e, EDIT_PARAMS)
    e.set_defaults(func=cmd_edit)

    v = sub.add_parser("eval", help="consistency metrics of an edited clip")
    v.add_argument("--video")
    v.add_argument("--edit-frame")
    v.add_argument("--src")
    v.add_argument("--reference")
    v.add_argument("--out", help="CSV report path")
    v.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="component ablation table over the suite")
    a.add_argument("--checkpoint")
    a.add_argument("--data", help="gen-data directory (otherwise generated from data flags)")
    a.add_argument("--out-dir", required=True)
    a.add_argument("--config")
    add_params(a, EDIT_PARAMS, skip=("src_token", "tar_token"))
    add_params(a, DATA_PARAMS)
    a.set_defaults(func=cmd_ablate)

    o = sub.add_parser("ot-bench", help="transport error between equal-variance Gaussians")
    o.add_argument("--out-dir", required=True)
    o.add_argument("--step-counts", default="25,50,100,200,400")
    o.add_argument("--lambdas", default="0,1")
    o.add_argument("--solvers", default="euler,heun")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_ot_bench)

    c = sub.add_parser("cache-bench", help="source-evaluation savings versus cache threshold")
    c.add_argument("--checkpoint")
    c.add_argument("--data")
    c.add_argument("--out-dir", required=True)
    c.add_argument("--config")
    c.add_argument("--deltas", default="0,0.05,0.1,0.2,0.5,1,inf")
    add_params(c, EDIT_PARAMS, skip=("src_token", "tar_token", "delta"))
    add_params(c, DATA_PARAMS)
    c.set_defaults(func=cmd_cache_bench)

    r = sub.add_parser("rerun", help="replay a manifest and verify output digests")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"flowrect {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, TrainingError) as exc:
        print(f"flowrect {args.command}: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, SetupError, TensorFormatError) as exc:
        print(f"flowrect {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FlowrectError as exc:
        print(f"flowrect {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
