import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pssrlab import quality as q
from pssrlab.degradation import add_noise
from pssrlab.stereo_image import StereoPair, gen_rect_scene, gen_scene


def test_psnr_identical_is_capped(rng):
    a = rng.random((3, 8, 8))
    assert q.psnr(a, a).value == 100.0


def test_psnr_uniform_offset():
    a = np.full((3, 8, 8), 0.3)
    assert q.psnr(a, a + 0.1).value == pytest.approx(20.0, abs=1e-9)


def test_psnr_brute_force(rng):
    a, b = rng.random((3, 9, 7)), rng.random((3, 9, 7))
    total = 0.0
    for v in (a - b).ravel():
        total += v * v
    expected = 10 * np.log10(1.0 / (total / a.size))
    assert q.psnr(a, b).value == pytest.approx(expected, abs=1e-12)
    assert q.psnr(a, b).value == q.psnr(b, a).value


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        q.psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_psnr_decreases_with_noise():
    scene = gen_scene(4, 64, 64, 2, 4).left
    vals = [q.psnr(add_noise(scene, n, 11), scene).value for n in (2, 5, 10, 20, 30)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_ssim_identical(rng):
    a = rng.random((3, 20, 20))
    assert q.ssim(a, a).value == pytest.approx(1.0, abs=1e-12)


def test_ssim_constants():
    a, b = np.full((1, 16, 16), 0.5), np.full((1, 16, 16), 0.25)
    assert q.ssim(a, b).value == pytest.approx(0.2501 / 0.3126, abs=1e-12)


def ssim_brute(x, y, size=11, sigma=1.5):
    """Window-by-window SSIM with an explicit 2-D Gaussian."""
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for r in range(x.shape[0] - size + 1):
        for c in range(x.shape[1] - size + 1):
            px, py = x[r : r + size, c : c + size], y[r : r + size, c : c + size]
            mx, my = (g * px).sum(), (g * py).sum()
            vx = (g * (px - mx) ** 2).sum()
            vy = (g * (py - my) ** 2).sum()
            cxy = (g * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_window_oracle(rng):
    a = rng.random((1, 15, 17))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    assert q.ssim(a, b).value == pytest.approx(ssim_brute(a[0], b[0]), abs=1e-10)


def test_ssim_symmetric_and_luma(rng):
    a, b = rng.random((3, 14, 14)), rng.random((3, 14, 14))
    assert q.ssim(a, b).value == pytest.approx(q.ssim(b, a).value, abs=1e-15)
    assert q.ssim(a, b).value == pytest.approx(ssim_brute(q.luma(a), q.luma(b)), abs=1e-10)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        q.ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))


def test_diff_map():
    rng = np.random.default_rng(2)
    a = rng.random((3, 6, 6))
    assert not q.diff_map(StereoPair(a, a)).any()
    b = rng.random((3, 6, 6))
    np.testing.assert_array_equal(q.diff_map(StereoPair(a, b)), -q.diff_map(StereoPair(b, a)))


def test_diff_map_support_in_rect_region():
    pair = gen_rect_scene(8, 80, 60, (12, 30, 20, 22), 4)
    support = np.any(q.diff_map(pair) != 0, axis=0)
    mask = np.zeros((60, 80), dtype=bool)
    # the near surface occupies columns 30..51 in the left view and 26..47 in the right
    mask[12:32, 26:52] = True
    assert support.any()
    assert not np.any(support & ~mask)


def test_block_match_identical_views(rng):
    img = rng.integers(0, 256, (3, 30, 40)) / 255
    bm = q.block_match_disparity(StereoPair(img, img), 7, 8)
    assert not bm.disparity.any()


def test_block_match_rect_interior():
    top, left, h, w, d = 15, 40, 30, 30, 4
    pair = gen_rect_scene(3, 120, 72, (top, left, h, w), d)
    bm = q.block_match_disparity(pair, 7, 16)
    r = 3
    interior = bm.disparity[top + r : top + h - r, left + r : left + w - r]
    assert np.all(interior == d)


@pytest.mark.parametrize("d", [0, 1, 5, 11])
def test_block_match_whole_image_shift(d):
    rng = np.random.default_rng(d)
    tex = rng.integers(0, 256, (3, 32, 80 + d)) / 255
    left, right = tex[:, :, :80], tex[:, :, d : 80 + d]
    bm = q.block_match_disparity(StereoPair(left, right), 5, 12)
    assert np.all(bm.disparity[bm.valid] == d)
    assert bm.valid.sum() == (32 - 4) * (80 - 2 - 12 - 2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), search=st.integers(1, 10))
def test_block_match_bounds(seed, search):
    rng = np.random.default_rng(seed)
    pair = StereoPair(rng.random((1, 12, 24)), rng.random((1, 12, 24)))
    disp = q.block_match_disparity(pair, 3, search).disparity
    assert disp.min() >= 0 and disp.max() <= search


def test_epe_examples(rng):
    gt = rng.uniform(0, 10, (8, 9))
    assert q.epe(gt, gt).value == 0.0
    assert q.epe(gt + 1.0, gt).value == pytest.approx(1.0, abs=1e-12)
    est = rng.uniform(0, 10, (8, 9))
    total = 0.0
    for a, b in zip(est.ravel(), gt.ravel()):
        total += abs(a - b)
    assert q.epe(est, gt).value == pytest.approx(total / gt.size, abs=1e-12)
    assert q.epe(est, gt).polarity == q.LOWER


def test_epe_respects_validity():
    gt = q.DisparityMap(np.zeros((2, 2)), np.array([[True, False], [False, False]]))
    est = q.DisparityMap(np.array([[2.0, 100.0], [100.0, 100.0]]), np.ones((2, 2), dtype=bool))
    assert q.epe(est, gt).value == 2.0
    with pytest.raises(ValueError):
        q.epe(est, q.DisparityMap(np.zeros((2, 2)), np.zeros((2, 2), dtype=bool)))


def test_metric_polarities_and_csv(tmp_path, rng):
    a, b = rng.random((3, 12, 12)), rng.random((3, 12, 12))
    res = [q.psnr(a, b), q.ssim(a, b), q.epe(a[0], b[0])]
    assert [r.polarity for r in res] == [q.HIGHER, q.HIGHER, q.LOWER]
    q.write_metrics_csv(tmp_path / "m.csv", res)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "name,value,polarity"
    assert float(lines[1].split(",")[1]) == res[0].value
