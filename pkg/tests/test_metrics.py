import numpy as np
import pytest

from flowrect.errors import ShapeError, TooFewFramesError
from flowrect.metrics import (
    MetricsReport,
    cosine,
    edited_frame_consistency,
    evaluate_video,
    frame_embed,
    mean_report,
    original_video_consistency,
    pooled_pixels,
    temporal_consistency,
    write_report_csv,
)


def _video(seed=0, shape=(6, 3, 16, 16)):
    return np.random.default_rng(seed).uniform(-1, 1, shape).astype(np.float32)


def test_embedding_basics():
    f = _video()[0]
    assert np.array_equal(frame_embed(f), frame_embed(f.copy()))
    assert cosine(pooled_pixels(f), pooled_pixels(-f)) == pytest.approx(-1.0)
    assert np.all(pooled_pixels(np.full((3, 16, 16), 0.4)) == 0)
    assert pooled_pixels(f).shape == (3 * 4 * 4,)
    # sizes that are not multiples of the pooling window
    assert pooled_pixels(np.zeros((1, 10, 7))).shape == (1 * 3 * 2,)


def test_cosine_zero_vectors():
    z = np.zeros(3)
    assert cosine(z, z) == 1.0
    assert cosine(z, np.ones(3)) == 0.0


def test_still_video_tc_is_one():
    v = np.repeat(_video()[:1], 5, axis=0)
    assert temporal_consistency(v) == 1.0


def test_noise_video_tc_near_zero():
    tcs = [temporal_consistency(_video(s, (30, 3, 32, 32))) for s in range(3)]
    assert abs(float(np.mean(tcs))) < 0.05


def test_tc_needs_two_frames():
    with pytest.raises(TooFewFramesError):
        temporal_consistency(_video()[:1])


def test_efc_ovc_self_references():
    v = _video(1)
    assert edited_frame_consistency(np.repeat(v[:1], 4, axis=0), v[0]) == 1.0
    assert original_video_consistency(v, v) == 1.0
    with pytest.raises(ShapeError):
        original_video_consistency(v, v[:-1])


def test_report_aggregation(tmp_path):
    r = MetricsReport.build(0.9, 0.8, 0.6, 0.01)
    assert r.aec == 0.7
    v = _video(2)
    rep = evaluate_video(v, v[0], v)
    assert rep.ovc == 1.0 and rep.mse_vs_reference == 0.0
    assert rep.aec == (rep.efc + rep.ovc) / 2
    assert -1 <= rep.tc <= 1 and -1 <= rep.efc <= 1
    assert evaluate_video(v, v[0], v) == rep  # bit-identical on re-run
    m = mean_report([r, MetricsReport.build(0.7, 0.6, 0.4, 0.03)])
    assert m.efc == pytest.approx(0.7) and m.aec == pytest.approx(0.6)
    write_report_csv(tmp_path / "r.csv", rep)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "tc,efc,ovc,aec,mse_vs_reference"
    assert "TC" in rep.table() and "AEC" in rep.table()
    with pytest.raises(ShapeError):
        evaluate_video(v, v[0], v, reference=v[:2])
