"""Dense-array data model, seeded random streams and the on-disk tensor container.

Every array that crosses a module boundary is a C-contiguous ``float32`` numpy
array laid out as ``[L, C, H, W]`` (frames, channels, rows, columns).

Random numbers come from numpy's Philox4x64-10 counter-based bit generator.  A
stream is keyed by ``(seed, purpose)``: the purpose string is hashed with CRC-32
into the ``SeedSequence`` spawn key, so adding a new consumer never shifts the
draws seen by an existing one.  Normal variates use numpy's float32 ziggurat
sampler, which is bit-reproducible for a given bit stream.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError, NumericInputError, ShapeError, TensorFormatError, UnsupportedChannelError

MAGIC = b"FRCT"
VERSION_SINGLE = 1
VERSION_MULTI = 2
DTYPE_F32 = 0
_U32_MAX = 2**32 - 1


def _frozen(a: np.ndarray) -> np.ndarray:
    if (
        isinstance(a, np.ndarray)
        and a.dtype == np.float32
        and a.flags.c_contiguous
        and not a.flags.writeable
    ):
        return a
    a = np.array(a, dtype=np.float32, order="C", copy=True)
    a.flags.writeable = False
    return a


def _check_dims(shape: Iterable[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """A video clip ``[L, C, H, W]`` with values clamped into [-1, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.frames, dtype=np.float32)
        if a.ndim != 4:
            raise ShapeError(f"frames must be [L, C, H, W], got shape {a.shape}")
        _check_dims(a.shape)
        if a.shape[1] not in (1, 3):
            raise UnsupportedChannelError(f"C must be 1 or 3, got {a.shape[1]}")
        if not np.all(np.isfinite(a)):
            raise NumericInputError("frames contain non-finite values")
        object.__setattr__(self, "frames", _frozen(np.clip(a, -1.0, 1.0)))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape  # type: ignore[return-value]

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.frames[i]


@dataclass(frozen=True, eq=False)
class LatentState:
    z: np.ndarray
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise DomainError(f"t must lie in [0, 1], got {self.t}")
        a = np.asarray(self.z, dtype=np.float32)
        if not np.all(np.isfinite(a)):
            raise NumericInputError(f"latent at t={self.t} contains non-finite values")
        object.__setattr__(self, "z", _frozen(a))
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True, eq=False)
class NoiseTensor:
    eps: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "eps", _frozen(self.eps))


@dataclass(frozen=True)
class TimestepSchedule:
    steps: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(x) for x in self.steps)
        if len(s) < 2:
            raise DomainError("a schedule needs at least two timesteps")
        if s[-1] != 0.0:
            raise DomainError("schedule must end exactly at 0")
        if any(b >= a for a, b in zip(s, s[1:])):
            raise DomainError("schedule must be strictly decreasing")
        object.__setattr__(self, "steps", s)

    @property
    def t_max(self) -> float:
        return self.steps[0]

    @property
    def num_steps(self) -> int:
        return len(self.steps) - 1

    @property
    def dts(self) -> tuple[float, ...]:
        return tuple(a - b for a, b in zip(self.steps, self.steps[1:]))

    def pairs(self):
        """Yield ``(t, t_next)`` for each integration step."""
        return zip(self.steps, self.steps[1:])


def rng_stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent Philox stream for ``purpose`` under a 64-bit ``seed``."""
    if not 0 <= int(seed) < 2**64:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


def gaussian_noise(shape, seed: int, purpose: str = "noise") -> NoiseTensor:
    """Standard-normal float32 tensor, bit-identical for identical arguments."""
    shape = _check_dims(shape)
    eps = rng_stream(seed, purpose).standard_normal(shape, dtype=np.float32)
    return NoiseTensor(eps=eps, seed=int(seed))


def linear_schedule(t_max: float, num_steps: int) -> TimestepSchedule:
    if not 0.0 < t_max <= 1.0:
        raise DomainError(f"t_max must lie in (0, 1], got {t_max}")
    if int(num_steps) < 1:
        raise DomainError(f"num_steps must be >= 1, got {num_steps}")
    steps = np.linspace(float(t_max), 0.0, int(num_steps) + 1)
    return TimestepSchedule(tuple(steps.tolist()))


def shifted_schedule(t_max: float, num_steps: int, shift: float = 3.0) -> TimestepSchedule:
    """Uniform grid warped by ``s*t / (1 + (s-1)*t)``; denser near t = 0 for shift > 1."""
    if shift <= 0:
        raise DomainError(f"shift must be positive, got {shift}")
    base = np.asarray(linear_schedule(t_max, num_steps).steps)
    # invert the warp at t_max so the warped grid still starts at t_max
    u_max = t_max / (shift - (shift - 1.0) * t_max)
    u = base / t_max * u_max
    steps = shift * u / (1.0 + (shift - 1.0) * u)
    steps[0], steps[-1] = t_max, 0.0
    return TimestepSchedule(tuple(steps.tolist()))


def make_schedule(kind: str, t_max: float, num_steps: int) -> TimestepSchedule:
    if kind == "linear":
        return linear_schedule(t_max, num_steps)
    if kind == "shifted":
        return shifted_schedule(t_max, num_steps)
    raise DomainError(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------- file format


def _encode_array(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    if a.dtype != np.float32:
        raise TensorFormatError(f"only float32 tensors can be stored, got {a.dtype}", 0)
    if a.ndim > 255:
        raise TensorFormatError(f"rank {a.ndim} exceeds 255", 7)
    if any(d > _U32_MAX for d in a.shape):
        raise TensorFormatError(f"dimension overflow in shape {a.shape}", 8)
    head = struct.pack("<BB", DTYPE_F32, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TensorFormatError(
                f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} available", self.pos
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self) -> np.ndarray:
        start = self.pos
        dtype, rank = self.unpack("<BB", "tensor header")
        if dtype != DTYPE_F32:
            raise TensorFormatError(f"unknown dtype code {dtype}", start)
        dims = self.unpack(f"<{rank}I", "dimension table")
        count = 1
        for d in dims:
            count *= d
        nbytes = count * 4
        if nbytes > len(self.buf) - self.pos:
            raise TensorFormatError(
                f"truncated payload: header declares {count} elements, "
                f"{(len(self.buf) - self.pos) // 4} present",
                self.pos,
            )
        a = np.frombuffer(self.take(nbytes, "payload"), dtype="<f4").astype(np.float32)
        return a.reshape(dims)

    def header(self, expect_version: int) -> None:
        if self.take(4, "magic") != MAGIC:
            raise TensorFormatError("bad magic bytes, expected b'FRCT'", 0)
        (version,) = self.unpack("<H", "version")
        if version != expect_version:
            raise TensorFormatError(f"expected format version {expect_version}, got {version}", 4)

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise TensorFormatError(f"{len(self.buf) - self.pos} trailing bytes", self.pos)


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(tensor) -> bytes:
    return MAGIC + struct.pack("<H", VERSION_SINGLE) + _encode_array(_as_array(tensor))


def decode_tensor(buf: bytes) -> np.ndarray:
    r = _Reader(buf)
    r.header(VERSION_SINGLE)
    a = r.array()
    r.finish()
    return a


def save_tensor(path, tensor) -> None:
    atomic_write(path, encode_tensor(tensor))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def encode_bundle(tensors: Mapping[str, np.ndarray], descriptor: str = "") -> bytes:
    """Multi-tensor container: descriptor text plus a table of named tensors."""
    desc = descriptor.encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION_MULTI), struct.pack("<I", len(desc)), desc]
    parts.append(struct.pack("<I", len(tensors)))
    for name, a in tensors.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise TensorFormatError(f"tensor name too long: {name[:32]}...", 0)
        parts += [struct.pack("<H", len(nb)), nb, _encode_array(_as_array(a))]
    return b"".join(parts)


def decode_bundle(buf: bytes) -> tuple[dict[str, np.ndarray], str]:
    r = _Reader(buf)
    r.header(VERSION_MULTI)
    (dlen,) = r.unpack("<I", "descriptor length")
    at = r.pos
    try:
        descriptor = r.take(dlen, "descriptor").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TensorFormatError(f"descriptor is not valid UTF-8: {exc}", at) from None
    (count,) = r.unpack("<I", "tensor count")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        at = r.pos
        name = r.take(nlen, "tensor name").decode("utf-8", errors="strict")
        if name in out:
            raise TensorFormatError(f"duplicate tensor name {name!r}", at)
        out[name] = r.array()
    r.finish()
    return out, descriptor


def save_bundle(path, tensors: Mapping[str, np.ndarray], descriptor: str = "") -> None:
    atomic_write(path, encode_bundle(tensors, descriptor))


def load_bundle(path) -> tuple[dict[str, np.ndarray], str]:
    return decode_bundle(Path(path).read_bytes())


def _as_array(tensor) -> np.ndarray:
    for attr in ("frames", "z", "eps", "flow", "v"):
        if hasattr(tensor, attr):
            return np.asarray(getattr(tensor, attr), dtype=np.float32)
    return np.asarray(tensor)


# -------------------------------------------------------------- image export


def to_bytes_image(frame: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to uint8 by ``floor((v + 1) * 127.5 + 0.5)``."""
    x = (np.clip(np.asarray(frame, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def encode_pnm(pixels: np.ndarray) -> bytes:
    """Binary PGM for ``[H, W]`` or ``[1, H, W]``; binary PPM for ``[3, H, W]``."""
    if pixels.ndim == 2:
        pixels = pixels[None]
    c, h, w = pixels.shape
    if c == 1:
        return f"P5\n{w} {h}\n255\n".encode() + pixels[0].tobytes()
    if c == 3:
        return f"P6\n{w} {h}\n255\n".encode() + np.transpose(pixels, (1, 2, 0)).tobytes()
    raise UnsupportedChannelError(f"cannot export {c}-channel images")


def export_frames(seq, directory, prefix: str = "frame") -> list[Path]:
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if frames.ndim != 4 or frames.shape[1] not in (1, 3):
        raise UnsupportedChannelError(f"cannot export frames of shape {frames.shape}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if frames.shape[1] == 1 else "ppm"
    paths = []
    for i, frame in enumerate(frames):
        p = directory / f"{prefix}_{i:03d}.{ext}"
        atomic_write(p, encode_pnm(to_bytes_image(frame)))
        paths.append(p)
    return paths


def read_pnm(path) -> np.ndarray:
    """Parse a binary P5/P6 file written by :func:`encode_pnm` into ``[C, H, W]`` uint8."""
    data = Path(path).read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    w, h = (int(x) for x in dims.split())
    if int(maxval) != 255:
        raise TensorFormatError("only 8-bit images are supported", len(magic) + len(dims) + 2)
    if magic == b"P5":
        return np.frombuffer(rest, dtype=np.uint8).reshape(1, h, w)
    if magic == b"P6":
        return np.transpose(np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3), (2, 0, 1))
    raise TensorFormatError(f"unsupported image magic {magic!r}", 0)

