import numpy as np
import pytest

from pssrlab import pssr
from pssrlab import srqa_net as qn
from pssrlab import tensorgrad as tg
from pssrlab.degradation import DegradationSpec, resize_bicubic
from pssrlab.quality import block_match_disparity, epe
from pssrlab.stereo_image import StereoPair, gen_scene
from pssrlab.tensorgrad import Tensor

TINY_SR = pssr.SRConfig(width=4, scale=2)


@pytest.fixture
def tiny():
    return qn.init_qa(qn.TINY_QA, seed=1), pssr.init_sr(TINY_SR, seed=2)


def lr_batch(rng, n=2, size=8):
    return rng.random((n, 3, size, size)), rng.random((n, 3, size, size))


# ------------------------------------------------------------------ forward

def test_zero_recon_is_bicubic(rng):
    m = pssr.init_sr(seed=0)
    lr = StereoPair(rng.random((3, 10, 12)), rng.random((3, 10, 12)))
    sr, f_l, f_r = pssr.sr_forward(m, lr, 4)
    assert sr.shape == (3, 40, 48)
    assert sr.left.tobytes() == resize_bicubic(lr.left, 48, 40).tobytes()
    assert sr.right.tobytes() == resize_bicubic(lr.right, 48, 40).tobytes()
    assert f_l.shape == (1, 16, 40, 48)


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_output_dims(scale, rng):
    lr = StereoPair(rng.random((3, 7, 9)), rng.random((3, 7, 9)))
    assert pssr.super_resolve(pssr.init_sr(TINY_SR), lr, scale).shape == (3, 7 * scale, 9 * scale)


def test_bad_scale(rng):
    with pytest.raises(ValueError):
        pssr.sr_forward(pssr.init_sr(TINY_SR), StereoPair(np.zeros((3, 4, 4)), np.zeros((3, 4, 4))), 5)


def randomized(m, rng, scale=0.3):
    for p in m.params.values():
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return m


def test_forward_gradcheck(rng):
    m = randomized(pssr.init_sr(TINY_SR, seed=3), rng)
    lr_l, lr_r = lr_batch(rng, 1)
    target = rng.random((1, 6, 16, 16))

    def loss():
        sr_l, sr_r, _, _ = pssr.sr_forward_batch(m, lr_l, lr_r, 2)
        return tg.mse(tg.concat_channels([sr_l, sr_r]), target)

    res = tg.grad_check(loss, m.params)
    assert res.max_rel_error <= 1e-4, res.per_input


def test_views_exchange_information(rng):
    m = randomized(pssr.init_sr(TINY_SR, seed=3), rng)
    lr_l, lr_r = lr_batch(rng, 1)
    a = pssr.sr_forward_batch(m, lr_l, lr_r, 2)[0].data
    b = pssr.sr_forward_batch(m, lr_l, lr_r * 0.5, 2)[0].data
    assert not np.array_equal(a, b)


# --------------------------------------------------------------- IQP losses

def test_iqp_im_zero_and_positive(tiny, rng):
    qa, _ = tiny
    gt_l, gt_r = rng.random((1, 3, 20, 20)), rng.random((1, 3, 20, 20))
    assert pssr.iqp_im_loss(qa, gt_l, gt_r, gt_l, gt_r).item() == 0.0
    assert pssr.iqp_im_loss(qa, gt_l * 0.9, gt_r, gt_l, gt_r).item() > 0.0


def test_iqp_im_ignores_head(tiny, rng):
    qa, _ = tiny
    sr_l, sr_r, gt_l, gt_r = (rng.random((1, 3, 16, 16)) for _ in range(4))
    a = pssr.iqp_im_loss(qa, sr_l, sr_r, gt_l, gt_r).item()
    for name, p in qa.params.items():
        if name.startswith("head.") or "conv2" in name:
            p.data = p.data + 1.0
    assert pssr.iqp_im_loss(qa, sr_l, sr_r, gt_l, gt_r).item() == a


def test_iqp_im_shape_mismatch(tiny):
    qa, _ = tiny
    with pytest.raises(ValueError):
        pssr.iqp_im_loss(qa, np.zeros((1, 3, 16, 16)), np.zeros((1, 3, 16, 16)), np.zeros((1, 3, 18, 18)), np.zeros((1, 3, 18, 18)))


def upsampled_gt_features(qa, gt_l, gt_r):
    """HR-resolution features whose 2x2 average pool is exactly the QA layer-1 features."""
    up, low, _ = qn.first_layer(qa, gt_l, gt_r)
    rep = lambda a: np.repeat(np.repeat(a, 2, axis=2), 2, axis=3)
    return rep(up.data), rep(low.data)


def test_iqp_f_zero_by_construction(tiny, rng):
    qa, _ = tiny
    gt_l, gt_r = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    f_l, f_r = upsampled_gt_features(qa, gt_l, gt_r)
    assert pssr.iqp_f_loss(qa, f_l, f_r, gt_l, gt_r).item() == 0.0
    assert pssr.iqp_f_loss(qa, f_l, f_r, gt_l, gt_r, substitution="left").item() == 0.0


def test_iqp_f_quadratic_along_segment(tiny, rng):
    qa, _ = tiny
    gt_l, gt_r = rng.random((1, 3, 16, 16)), rng.random((1, 3, 16, 16))
    t_l, t_r = upsampled_gt_features(qa, gt_l, gt_r)
    f0_l, f0_r = rng.standard_normal(t_l.shape), rng.standard_normal(t_r.shape)

    def at(t):
        return pssr.iqp_f_loss(qa, (1 - t) * f0_l + t * t_l, (1 - t) * f0_r + t * t_r, gt_l, gt_r).item()

    l0, lh, l1 = at(0.0), at(0.5), at(1.0)
    assert l0 > lh > l1
    assert lh == pytest.approx(l0 / 4, rel=1e-12)
    assert l1 == pytest.approx(0.0, abs=1e-28)


def test_iqp_f_gradient_reaches_features_only(tiny, rng):
    qa, _ = tiny
    frozen = qa.frozen()
    gt_l, gt_r = rng.random((1, 3, 16, 16)), rng.random((1, 3, 16, 16))
    f_l = Tensor(rng.random((1, 4, 16, 16)), requires_grad=True)
    f_r = Tensor(rng.random((1, 4, 16, 16)), requires_grad=True)
    pssr.iqp_f_loss(frozen, f_l, f_r, gt_l, gt_r).backward()
    assert np.any(f_l.grad != 0) and np.any(f_r.grad != 0)
    assert all(p.grad is None for p in frozen.params.values())


def test_iqp_f_channel_mismatch(tiny, rng):
    qa, _ = tiny
    with pytest.raises(ValueError, match="width"):
        pssr.iqp_f_loss(qa, rng.random((1, 5, 16, 16)), rng.random((1, 5, 16, 16)), rng.random((1, 3, 16, 16)), rng.random((1, 3, 16, 16)))
    with pytest.raises(ValueError):
        pssr.iqp_f_loss(qa, rng.random((1, 4, 16, 16)), rng.random((1, 4, 16, 16)), rng.random((1, 3, 16, 16)), rng.random((1, 3, 16, 16)), substitution="middle")


# ------------------------------------------------------------ combined loss

def test_combined_recombines(tiny, rng):
    qa, m = tiny
    m = randomized(m, rng, 0.1)
    lr_l, lr_r = lr_batch(rng)
    gt_l, gt_r = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    for lams in [(1.0, 0.1, 0.1), (0.3, 2.0, 0.7)]:
        bd = pssr.combined_loss(qa, m, lr_l, lr_r, gt_l, gt_r, lams, 2)
        parts = lams[0] * bd.l_mse + lams[1] * bd.l_iqp_im + lams[2] * bd.l_iqp_f
        assert abs(bd.total - parts) <= 1e-15
        assert min(bd.l_mse, bd.l_iqp_im, bd.l_iqp_f) >= 0


def test_combined_zero_when_sr_is_gt(tiny, rng):
    qa, m = tiny
    lr_l, lr_r = lr_batch(rng)
    # zero reconstruction layer: SR is the bicubic upsample, so use it as ground truth
    gt_l, gt_r = pssr.upsample_batch(lr_l, 2), pssr.upsample_batch(lr_r, 2)
    bd = pssr.combined_loss(qa, m, lr_l, lr_r, gt_l, gt_r, (1.0, 0.1, 0.0), 2)
    assert bd.l_mse == 0.0 and bd.l_iqp_im == 0.0 and bd.total == 0.0
    f_l, f_r = upsampled_gt_features(qa, gt_l, gt_r)
    parts = [pssr.pixel_mse(Tensor(gt_l), Tensor(gt_r), gt_l, gt_r),
             pssr.iqp_im_loss(qa, gt_l, gt_r, gt_l, gt_r),
             pssr.iqp_f_loss(qa, f_l, f_r, gt_l, gt_r)]
    assert tg.scalar_combine(parts, list(pssr.LAMBDAS)).item() == 0.0


def test_zero_iqp_weights_equal_pixel_mse(tiny, rng):
    qa, m = tiny
    m = randomized(m, rng, 0.1)
    lr_l, lr_r = lr_batch(rng)
    gt_l, gt_r = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    bd = pssr.combined_loss(qa, m, lr_l, lr_r, gt_l, gt_r, (1.0, 0.0, 0.0), 2)
    sr_l, sr_r, _, _ = pssr.sr_forward_batch(m, lr_l, lr_r, 2)
    assert bd.total == pssr.pixel_mse(sr_l, sr_r, gt_l, gt_r).item()


def test_combined_gradcheck(tiny, rng):
    qa, m = tiny
    m = randomized(m, rng, 0.2)
    frozen = qa.frozen()
    lr_l, lr_r = lr_batch(rng)
    gt_l, gt_r = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    for sub in pssr.SUBSTITUTIONS:
        res = tg.grad_check(
            lambda: pssr.combined_loss(frozen, m, lr_l, lr_r, gt_l, gt_r, (1.0, 0.5, 0.5), 2, sub).total_tensor,
            m.params,
        )
        assert res.max_rel_error <= 1e-4, (sub, res.per_input)


# ----------------------------------------------------------------- training

def train_scenes(n=2, size=32):
    return [gen_scene(70 + i, size, size, 2, 4) for i in range(n)]


SPEC2 = DegradationSpec(scale=2, seed=3)


def test_qa_untouched_by_training(tiny):
    qa, m = tiny
    before = qa.state()
    pssr.train_sr(m, qa, train_scenes(), SPEC2, 2, seed=0, batch_size=2, lr=1e-3)
    after = qa.state()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_zero_weights_reproduce_mse_trajectory(tiny):
    qa, _ = tiny
    runs = {}
    for name, kw in [("mse", dict(objective="mse")), ("zero", dict(lambdas=(1.0, 0.0, 0.0)))]:
        m = pssr.init_sr(TINY_SR, seed=5)
        res = pssr.train_sr(m, qa, train_scenes(), SPEC2, 3, seed=1, batch_size=2, lr=1e-3, **kw)
        runs[name] = (res, m.state())
    (a, sa), (b, sb) = runs["mse"], runs["zero"]
    assert [r[1] for r in a.curves] == [r[1] for r in b.curves]
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)


def test_first_batch_mse_shared(tiny):
    qa, _ = tiny
    a = pssr.train_sr(pssr.init_sr(TINY_SR, seed=5), qa, train_scenes(), SPEC2, 1, seed=1, batch_size=2,
                      lambdas=(1.0, 0.0, 0.0))
    b = pssr.train_sr(pssr.init_sr(TINY_SR, seed=5), qa, train_scenes(), SPEC2, 1, seed=1, batch_size=2)
    assert a.first_batch.l_mse == b.first_batch.l_mse
    assert b.first_batch.l_iqp_f > 0


def test_logged_steps_decompose(tiny):
    qa, m = tiny
    res = pssr.train_sr(m, qa, train_scenes(), SPEC2, 2, seed=0, batch_size=2, lr=1e-3)
    for _, l_mse, l_im, l_f, total in res.curves:
        assert total == pytest.approx(l_mse + 0.1 * l_im + 0.1 * l_f, abs=1e-15)


def test_divergence_guard(tiny):
    qa, m = tiny
    with pytest.raises(pssr.DivergenceError, match="epoch"):
        pssr.train_sr(m, qa, train_scenes(), SPEC2, 3, seed=0, batch_size=1, lr=10.0)


def test_curves_csv(tmp_path, tiny):
    qa, m = tiny
    res = pssr.train_sr(m, qa, train_scenes(), SPEC2, 2, seed=0, batch_size=2)
    pssr.write_curves_csv(tmp_path / "c.csv", res.curves)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "epoch,l_mse,l_iqp_im,l_iqp_f,total" and len(lines) == 3


def test_save_load(tmp_path, rng):
    m = randomized(pssr.init_sr(TINY_SR), rng)
    pssr.save_sr(tmp_path / "sr.pssrw", m)
    back = pssr.load_sr(tmp_path / "sr.pssrw")
    lr = StereoPair(rng.random((3, 8, 8)), rng.random((3, 8, 8)))
    assert pssr.super_resolve(back, lr).left.tobytes() == pssr.super_resolve(m, lr).left.tobytes()


# --------------------------------------------------------------- evaluation

def test_eval_rows_and_ground_truth_floor(tiny):
    qa, m = tiny
    scenes = train_scenes(2, 48)
    specs = [SPEC2, DegradationSpec(scale=2, noise_level=10, seed=1)]
    rows = pssr.eval_sr(
        {"gt": pssr.ground_truth_runner, "bicubic": pssr.bicubic_runner(2), "tiny": pssr.model_runner(m)},
        scenes, specs, qa, window=5, max_search=8,
    )
    assert len(rows) == 3 * 2 * 2
    for r in rows[:4]:
        scene = scenes[r.scene]
        floor = epe(block_match_disparity(scene, 5, 8), scene.disparity_gt).value
        assert r.psnr == 100.0 and r.ssim == pytest.approx(1.0, abs=1e-12) and r.epe == floor
    assert len(pssr.summarize(rows)) == 6


def test_bd_sweep_degrades_mse_model():
    qa = qn.init_qa(seed=0)
    scenes = [gen_scene(400 + i, 120, 120, 3, 8) for i in range(4)]
    m = pssr.init_sr(seed=0)
    pssr.train_sr(m, qa, scenes, DegradationSpec(scale=4, blur_sigma=1.0, seed=2), 8, seed=0, objective="mse")
    held_out = [gen_scene(500 + i, 120, 120, 3, 8) for i in range(2)]
    specs = [DegradationSpec(scale=4, blur_sigma=s, seed=4) for s in (1.0, 2.6, 3.6)]
    rows = pssr.summarize(pssr.eval_sr({"mse": pssr.model_runner(m)}, held_out, specs, qa))
    psnrs = [r[2] for r in rows]
    assert psnrs[0] > psnrs[1] > psnrs[2]


@pytest.mark.slow
def test_desk_runs_reduce_total_loss(sr_runs):
    runs = sr_runs[0]
    for name, (_, res) in runs.items():
        assert res.curves[-1][4] < res.curves[0][4], name
