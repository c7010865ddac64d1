import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowrect.errors import NumericInputError, ShapeError, TooFewFramesError
from flowrect.optical_flow import (
    FlowField,
    block_match,
    estimate_flow,
    flow_magnitude_image,
    round_half_away,
    warp_bilinear,
    warp_noise,
)
from flowrect.tensors import FrameSequence, rng_stream


def textured(h, w, seed=0, c=3):
    """Smooth random texture (sum of a few sinusoids) with enough detail to match."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((c, h, w))
    for _ in range(6):
        fy, fx = rng.uniform(0.2, 0.9, 2)
        ph = rng.uniform(0, 2 * np.pi, c)[:, None, None]
        img += np.sin(fy * yy + fx * xx + ph)
    return (img / 6).astype(np.float32)


def translated_clip(dx, dy, n=4, size=32, seed=0):
    # a large texture cropped at moving offsets: true backward flow is (dx, dy) everywhere
    big = textured(size + 40, size + 40, seed)
    frames = [big[:, 20 - dy * i : 20 - dy * i + size, 20 - dx * i : 20 - dx * i + size] for i in range(n)]
    return FrameSequence(np.stack(frames))


@pytest.mark.parametrize("size", [16, 32, 64])
def test_recovers_integer_translation(size):
    seq = translated_clip(2, 3, size=size)
    flow = estimate_flow(seq).flow
    m = 4
    interior = flow[:, :, m:-m, m:-m]
    assert np.median(interior[:, 0]) == 2 and np.median(interior[:, 1]) == 3


def test_static_and_uniform_clips_give_zero():
    still = FrameSequence(np.repeat(textured(24, 24)[None], 3, axis=0))
    assert np.all(estimate_flow(still).flow == 0)
    flat = FrameSequence(np.full((3, 1, 16, 16), 0.3))
    assert np.all(estimate_flow(flat).flow == 0)


def test_too_few_frames():
    with pytest.raises(TooFewFramesError):
        estimate_flow(FrameSequence(np.zeros((1, 1, 8, 8))))


def test_translation_equivariance():
    big = textured(64, 64, 3)
    a = np.stack([big[:, 8:40, 8:40], big[:, 6:38, 7:39]])
    b = np.stack([big[:, 10:42, 11:43], big[:, 8:40, 10:42]])
    fa, fb = estimate_flow(a).flow, estimate_flow(b).flow
    assert np.median(fa[0, 0]) == np.median(fb[0, 0]) == 1
    assert np.median(fa[0, 1]) == np.median(fb[0, 1]) == 2


def test_flow_runtime():
    seq = translated_clip(1, -2, n=8, size=64)
    start = time.perf_counter()
    estimate_flow(seq)
    assert time.perf_counter() - start < 10


def test_flow_field_invariants():
    with pytest.raises(NumericInputError):
        FlowField(np.full((1, 2, 4, 4), np.nan))
    with pytest.raises(ShapeError):
        FlowField(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ValueError):
        FlowField(np.full((1, 2, 4, 4), 5.0))


def test_block_match_shape_mismatch():
    with pytest.raises(ShapeError):
        block_match(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_warp_zero_flow_is_identity():
    img = rng_stream(0, "w").standard_normal((3, 7, 9)).astype(np.float32)
    zero = np.zeros((2, 7, 9))
    assert warp_bilinear(img, zero).tobytes() == img.tobytes()
    assert warp_noise(img, zero).tobytes() == img.tobytes()


def test_bilinear_integer_and_half_shifts():
    ramp = np.tile(np.arange(8, dtype=np.float32), (1, 5, 1))
    out = warp_bilinear(ramp, np.stack([np.ones((5, 8)), np.zeros((5, 8))]))
    assert np.array_equal(out[0, :, 1:], ramp[0, :, :-1])
    assert np.all(out[0, :, 0] == 0)  # edge clamp
    row = np.zeros((1, 1, 7), np.float32)
    row[0, 0, 3] = 1.0
    half = warp_bilinear(row, np.stack([np.full((1, 7), 0.5), np.zeros((1, 7))]))
    assert half[0, 0, 3] == 0.5 and half[0, 0, 4] == 0.5
    assert half[0, 0, 2] == 0.0 and half[0, 0, 5] == 0.0


def test_round_half_away_from_zero():
    assert round_half_away(np.array([0.5, -0.5, 1.5, -1.5, 0.49, -2.5])).tolist() == [1, -1, 2, -2, 0, -3]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-6, 6), st.floats(-6, 6))
def test_warp_noise_copies_inputs(seed, fx, fy):
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, 6, 6)).astype(np.float32)
    flow = np.stack([np.full((6, 6), fx), np.full((6, 6), fy)]) + rng.uniform(-1, 1, (2, 6, 6))
    out = warp_noise(noise, flow)
    # every output value is one of the input values of the same channel
    for c in range(2):
        assert np.isin(out[c], noise[c]).all()


def test_warp_noise_variance():
    rng = rng_stream(1, "warp.var")
    flow = np.round(rng.uniform(-3, 3, (2, 100, 100)))
    vals = []
    for k in range(100):
        noise = rng.standard_normal((1, 100, 100)).astype(np.float32)
        vals.append(warp_noise(noise, flow).ravel())
    v = np.concatenate(vals)
    assert v.size >= 1_000_000
    assert 0.99 <= v.var() <= 1.01


def test_magnitude_image():
    f = FlowField(np.stack([np.full((4, 4), 3.0), np.full((4, 4), 4.0)])[None])
    img = flow_magnitude_image(f)
    assert img.dtype == np.uint8 and np.all(img == np.floor(5 / 4 * 255 + 0.5).clip(0, 255))
