import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import psnr_direct, rgb_to_luma, ssim_direct
from stran.autodiff import Tensor
from stran.metrics import (
    FEAT_LABEL,
    PSNR_CAP,
    MetricReport,
    feature_distance,
    gaussian_window,
    luma,
    metric_extractor,
    psnr,
    ssim,
)


def pair(seed, h=20, w=24):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(3, h, w))
    return a, np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------
def test_psnr_cap_and_analytic():
    a = np.random.default_rng(0).uniform(size=(3, 8, 8))
    assert psnr(a, a) == PSNR_CAP == 99.0
    # a uniform offset of 0.1 gives MSE 0.01
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a * 255, (a + 0.1) * 255, peak=255.0) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ValueError):
        psnr(a, a[:, :4])


def test_psnr_cap_only_at_zero_error():
    a = np.zeros((1, 4, 4))
    b = a.copy()
    b[0, 0, 0] = 1e-12
    assert 99.0 < psnr(a, b) < np.inf


@pytest.mark.parametrize("seed", range(5))
def test_psnr_direct_oracle(seed):
    a, b = pair(seed)
    assert abs(psnr(a, b) - psnr_direct(a, b)) <= 1e-6


def test_psnr_accepts_tensors():
    a, b = pair(9)
    assert psnr(Tensor(a), Tensor(b)) == psnr(a, b)


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------
def test_gaussian_window_normalized():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(g, g[::-1])


def test_luma_weights():
    img = np.zeros((3, 2, 2))
    img[1] = 1.0
    np.testing.assert_allclose(luma(img), 0.587)
    with pytest.raises(ValueError):
        luma(np.zeros((2, 4, 4)))


@pytest.mark.parametrize("seed", range(5))
def test_ssim_direct_oracle(seed):
    a, b = pair(seed)
    assert abs(ssim(a, b) - ssim_direct(rgb_to_luma(a), rgb_to_luma(b))) <= 1e-6


def test_ssim_identity_and_negative():
    a, _ = pair(10)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    neg = 1.0 - a
    got = ssim(a, neg)
    assert got < 1.0
    assert abs(got - ssim_direct(rgb_to_luma(a), rgb_to_luma(neg))) <= 1e-6


def test_ssim_constant_offset_closed_form():
    m1, m2 = 0.3, 0.45
    a, b = np.full((1, 16, 16), m1), np.full((1, 16, 16), m2)
    c1 = 0.01 ** 2
    want = (2 * m1 * m2 + c1) / (m1 ** 2 + m2 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(want, abs=1e-9)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 10, 40)), np.zeros((3, 10, 40)))
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 16, 16)), np.zeros((3, 16, 17)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), sigma=st.floats(0.0, 0.5))
def test_ssim_range(seed, sigma):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(3, 12, 14))
    b = np.clip(a + rng.normal(0, sigma, size=a.shape) if sigma else a, 0, 1)
    assert -1.0 <= ssim(a, b) <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# feature distance
# ---------------------------------------------------------------------------
def feature_distance_loops(a, b):
    ext = metric_extractor()
    fa = ext.features(Tensor(a[None].astype(np.float32)))
    fb = ext.features(Tensor(b[None].astype(np.float32)))
    per_tap = []
    for ta, tb in zip(fa, fb):
        x, y = ta.data[0].astype(np.float64), tb.data[0].astype(np.float64)
        _, h, w = x.shape
        acc = 0.0
        for i in range(h):
            for j in range(w):
                u = x[:, i, j] / (np.linalg.norm(x[:, i, j]) + 1e-10)
                v = y[:, i, j] / (np.linalg.norm(y[:, i, j]) + 1e-10)
                acc += float(np.sum((u - v) ** 2))
        per_tap.append(acc / (h * w))
    return float(np.mean(per_tap))


def test_feature_distance_loop_oracle():
    a, b = pair(11, 16, 16)
    assert feature_distance(a, b) == pytest.approx(feature_distance_loops(a, b), rel=1e-9)


def test_feature_distance_zero_and_symmetric():
    a, b = pair(12)
    assert feature_distance(a, a) == 0.0
    assert feature_distance(a, b) == feature_distance(b, a)
    assert feature_distance(a, b) > 0


def test_feature_distance_monotone_in_noise():
    rng = np.random.default_rng(13)
    a = rng.uniform(size=(3, 32, 32))
    noise = rng.standard_normal(a.shape)
    d = [feature_distance(a, a + s * noise) for s in (0.02, 0.05, 0.1)]
    assert d[0] < d[1] < d[2]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------
def test_report_aggregate_matches_recomputation(tmp_path):
    rep = MetricReport()
    for i in range(4):
        a, b = pair(20 + i, 16, 16)
        rep.add("clip00", i, b, a)
    path = tmp_path / "metrics.csv"
    rep.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {FEAT_LABEL}"
    assert lines[1] == "video_id,frame_idx,psnr,ssim,feat_dist"
    rows = np.array([[float(v) for v in ln.split(",")[2:]] for ln in lines[2:-1]])
    assert rows.shape == (4, 3)
    last = lines[-1].split(",")
    assert last[0] == "aggregate(mean±std)" and last[1] == "4"
    for col, cell in enumerate(last[2:]):
        mean, std = (float(v) for v in cell.split("±"))
        vals = rows[:, col]
        m = sum(vals) / len(vals)
        s = (sum((v - m) ** 2 for v in vals) / len(vals)) ** 0.5
        assert mean == pytest.approx(m, rel=1e-8)
        assert std == pytest.approx(s, rel=1e-6, abs=1e-12)


def test_report_identical_frames():
    rep = MetricReport()
    a, _ = pair(30, 16, 16)
    fm = rep.add("v", 0, a, a)
    assert (fm.psnr, fm.ssim, fm.feat_dist) == (99.0, pytest.approx(1.0, abs=1e-9), 0.0)
