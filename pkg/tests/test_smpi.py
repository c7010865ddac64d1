import math

import numpy as np
import pytest

from flowrect.errors import DomainError, ShapeError
from flowrect.optical_flow import FlowField, warp_noise
from flowrect.smpi import (
    SmpiConfig,
    build_source_condition,
    build_target_condition,
    correlated_noise,
    init_boundary,
)
from flowrect.tensors import FrameSequence, NoiseTensor, gaussian_noise


def _noise(shape=(4, 1, 250, 250), seed=0):
    return gaussian_noise(shape, seed, "test.noise")


def _zero_flow(eps):
    n, _, h, w = eps.eps.shape
    return FlowField(np.zeros((n - 1, 2, h, w)))


def _shift_flow(eps, dx=1, dy=-2):
    n, _, h, w = eps.eps.shape
    f = np.zeros((n - 1, 2, h, w))
    f[:, 0], f[:, 1] = dx, dy
    return FlowField(f)


def test_defaults():
    cfg = SmpiConfig()
    assert (cfg.t_max, cfg.beta, cfg.alpha, cfg.recursive) == (0.95, 0.025, 0.95, False)
    for bad in (dict(t_max=0.0), dict(beta=-0.1), dict(alpha=1.5)):
        with pytest.raises(DomainError):
            SmpiConfig(**bad)


def test_alpha_endpoints_bit_exact():
    eps = _noise((3, 2, 8, 8))
    flow = _shift_flow(eps)
    assert correlated_noise(eps, flow, 1.0).eps.tobytes() == eps.eps.tobytes()
    zero = correlated_noise(eps, flow, 0.0).eps
    assert zero[0].tobytes() == eps.eps[0].tobytes()
    for i in (1, 2):
        assert zero[i].tobytes() == warp_noise(eps.eps[i - 1], flow.flow[i - 1]).tobytes()


def test_literal_form_reads_raw_previous_noise():
    eps = _noise((3, 1, 8, 8))
    flow = _zero_flow(eps)
    a = 0.3
    out = correlated_noise(eps, flow, a).eps
    s = math.sqrt((1 - a) ** 2 + a * a)
    want = ((1 - a) * eps.eps[1].astype(np.float64) + a * eps.eps[2]) / s
    assert np.allclose(out[2], want, atol=1e-6)
    rec = correlated_noise(eps, flow, a, recursive=True).eps
    want_rec = ((1 - a) * out[1].astype(np.float64) + a * eps.eps[2]) / s
    assert np.allclose(rec[2], want_rec, atol=1e-6)
    assert not np.allclose(rec[2], out[2])


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 0.75, 0.95, 1.0])
def test_variance_preserved(alpha):
    eps = _noise((4, 1, 1000, 1000), seed=int(alpha * 100))
    out = correlated_noise(eps, _shift_flow(eps), alpha).eps
    for frame in out:
        assert 0.98 <= float(frame.var(dtype=np.float64)) <= 1.02


@pytest.mark.parametrize("alpha,tol", [(0.5, 0.01), (0.95, 0.005), (0.25, 0.01)])
def test_zero_flow_correlation(alpha, tol):
    eps = _noise((2, 1, 1000, 1000), seed=3)
    out = correlated_noise(eps, _zero_flow(eps), alpha).eps
    rho = np.corrcoef(out[1].ravel(), eps.eps[0].ravel())[0, 1]
    want = (1 - alpha) / math.sqrt((1 - alpha) ** 2 + alpha**2)
    assert abs(rho - want) < tol


def test_shape_checks():
    eps = _noise((3, 1, 8, 8))
    with pytest.raises(ShapeError):
        correlated_noise(eps, FlowField(np.zeros((1, 2, 8, 8))), 0.5)
    with pytest.raises(ShapeError):
        correlated_noise(eps, None, 0.5)
    single = _noise((1, 1, 8, 8))
    assert correlated_noise(single, None, 0.5).eps.tobytes() == single.eps.tobytes()


def test_boundary_examples():
    x = np.full((1, 1, 1, 1), 0.4, np.float32)
    e = np.full((1, 1, 1, 1), -1.0, np.float32)
    z = init_boundary(x, NoiseTensor(e, 0), 0.95)
    assert z.t == 0.95 and z.z.item() == pytest.approx(-0.93, abs=1e-7)
    assert np.array_equal(init_boundary(x, e, 1.0).z, e)
    assert np.array_equal(init_boundary(x, e, 0.0).z, x)
    with pytest.raises(ShapeError):
        init_boundary(x, np.zeros((1, 1, 1, 2)), 0.5)


def test_boundary_on_segment():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2, 3, 5, 5)).astype(np.float32)
    e = rng.standard_normal(x.shape).astype(np.float32)
    z = init_boundary(x, e, 0.7).z.astype(np.float64)
    d = e.astype(np.float64) - x
    assert np.linalg.norm(z - x) == pytest.approx(0.7 * np.linalg.norm(d), rel=1e-6)


def test_target_condition():
    x = FrameSequence(np.full((4, 3, 4, 4), 0.8))
    edit = np.zeros((3, 4, 4), np.float32)
    c = build_target_condition(edit, x, 1.0, 2)
    assert np.all(c.padded_frames == np.float32(0.8)) and c.content_token == 2
    z = build_target_condition(edit, x, 0.0, 2)
    assert np.all(z.padded_frames == 0) and not np.signbit(z.padded_frames).any()
    assert np.allclose(build_target_condition(edit, x, 0.025, 2).padded_frames, 0.02)
    with pytest.raises(ShapeError):
        build_target_condition(np.zeros((3, 4, 5)), x, 0.0, 0)
    with pytest.raises(DomainError):
        build_target_condition(edit, x, -1.0, 0)


def test_source_condition():
    rng = np.random.default_rng(0)
    x = FrameSequence(rng.uniform(-1, 1, (3, 1, 4, 4)))
    c = build_source_condition(x, 1)
    assert c.first_frame.tobytes() == x.frames[0].tobytes()
    assert c.padded_frames.sum() == 0
    assert build_target_condition(x.frames[0], x, 0.0, 1) == c
