"""Stereo SR network trained with pixel MSE plus QA-feature (IQP) constraints.

The QA network stays frozen. Two feature losses compare layer-1 QA features:

* image level: QA features of the SR output vs QA features of the ground truth;
* feature level: the SR network's last-layer features, 2x2 average pooled,
  stand in for the QA layer-1 features (left -> upper slot, right -> lower
  slot, left minus right -> middle slot) and are compared with the ground
  truth's upper, lower and upper-minus-lower layer-1 features.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorgrad as tg
from .degradation import crop_to_multiple, degrade, derive_seed, resize_bicubic
from .quality import block_match_disparity, epe, psnr_pair, ssim_pair
from .srqa_net import first_layer, qa_predict
from .stereo_image import StereoPair
from .tensorgrad import Tensor

LAMBDAS = (1.0, 0.1, 0.1)


@dataclass(frozen=True)
class SRConfig:
    width: int = 16
    kernel: int = 3
    slope: float = 0.1
    scale: int = 4

    def to_dict(self):
        return asdict(self)


@dataclass
class SRModel:
    config: SRConfig
    params: dict = field(default_factory=dict)

    def state(self):
        return {k: v.data.copy() for k, v in self.params.items()}


def init_sr(config=SRConfig(), seed=0):
    """He-normal trunk; zero reconstruction layer so the initial output is the bicubic upsample."""
    rng = np.random.default_rng(derive_seed(seed, 0x5E))
    w, k = config.width, config.kernel
    shapes = {"trunk.conv1": (w, 3), "trunk.conv2": (w, 2 * w), "trunk.conv3": (w, w)}
    params = {}
    for name, (cout, cin) in shapes.items():
        params[f"{name}.w"] = rng.standard_normal((cout, cin, k, k)) * math.sqrt(2.0 / (cin * k * k))
        params[f"{name}.b"] = np.zeros(cout)
    params["recon.w"] = np.zeros((3, w, k, k))
    params["recon.b"] = np.zeros(3)
    return SRModel(config, {n: Tensor(v, requires_grad=True, name=n) for n, v in params.items()})


def upsample_batch(lr, scale):
    """Bicubic upsample of an (N, C, h, w) batch (a constant, outside the graph)."""
    n, c, h, w = lr.shape
    return np.stack([resize_bicubic(img, w * scale, h * scale) for img in lr])


def _conv(model, name, x):
    cfg = model.config
    p = model.params
    return tg.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=1, pad=cfg.kernel // 2)


def sr_forward_batch(model, lr_left, lr_right, scale=None):
    """Super-resolve (N, 3, h, w) view batches.

    Returns ``(sr_left, sr_right, feat_left, feat_right)``; the features are the
    trunk's last-layer activations at HR resolution.
    """
    scale = model.config.scale if scale is None else scale
    if scale not in (2, 3, 4):
        raise ValueError(f"scale must be 2, 3 or 4, got {scale}")
    slope = model.config.slope
    up_l = upsample_batch(np.asarray(lr_left), scale)
    up_r = upsample_batch(np.asarray(lr_right), scale)
    f1_l = tg.leaky_relu(_conv(model, "trunk.conv1", up_l), slope)
    f1_r = tg.leaky_relu(_conv(model, "trunk.conv1", up_r), slope)
    # each view sees the other view's layer-1 features
    f2_l = tg.leaky_relu(_conv(model, "trunk.conv2", tg.concat_channels([f1_l, f1_r])), slope)
    f2_r = tg.leaky_relu(_conv(model, "trunk.conv2", tg.concat_channels([f1_r, f1_l])), slope)
    f3_l = tg.leaky_relu(_conv(model, "trunk.conv3", f2_l), slope)
    f3_r = tg.leaky_relu(_conv(model, "trunk.conv3", f2_r), slope)
    sr_l = tg.add(Tensor(up_l), _conv(model, "recon", f3_l))
    sr_r = tg.add(Tensor(up_r), _conv(model, "recon", f3_r))
    return sr_l, sr_r, f3_l, f3_r


def sr_forward(model, lr_pair, scale=None):
    """Pair-level wrapper: ``(sr_pair, F_L, F_R)`` with outputs clipped to [0, 1]."""
    sr_l, sr_r, f_l, f_r = sr_forward_batch(model, lr_pair.left[None], lr_pair.right[None], scale)
    pair = StereoPair(np.clip(sr_l.data[0], 0, 1), np.clip(sr_r.data[0], 0, 1))
    return pair, f_l, f_r


def super_resolve(model, lr_pair, scale=None):
    return sr_forward(model, lr_pair, scale)[0]


# ---------------------------------------------------------------- IQP losses

def _center_window(h, w, size):
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than QA patch {size}")
    return (h - size) // 2, (w - size) // 2


def _crop(t, size):
    h, w = t.shape[2:]
    top, left = _center_window(h, w, size)
    if (h, w) == (size, size):
        return t
    return tg.crop2d(t, top, left, size, size)


def _as_batch(x):
    x = tg.as_tensor(x)
    return x if x.ndim == 4 else Tensor(x.data[None])


def iqp_im_loss(qa, sr_left, sr_right, gt_left, gt_right):
    """Mean squared difference of layer-1 QA features, SR vs ground truth."""
    sr_left, sr_right = _as_batch(sr_left), _as_batch(sr_right)
    gt_left, gt_right = _as_batch(gt_left).data, _as_batch(gt_right).data
    if sr_left.shape != gt_left.shape:
        raise ValueError(f"SR {sr_left.shape} and ground truth {gt_left.shape} differ in shape")
    size = qa.config.patch_size
    f_sr = tg.concat_channels(first_layer(qa, _crop(sr_left, size), _crop(sr_right, size)))
    gt_l, gt_r = _crop(Tensor(gt_left), size), _crop(Tensor(gt_right), size)
    f_gt = tg.concat_channels(first_layer(qa, gt_l, gt_r))
    return tg.mse(f_sr, Tensor(f_gt.data))


SUBSTITUTIONS = ("paired", "left")


def _check_substitution(mode):
    if mode not in SUBSTITUTIONS:
        raise ValueError(f"substitution must be one of {SUBSTITUTIONS}, got {mode!r}")


def substitution_target(qa, gt_left, gt_right, substitution="paired"):
    """Ground-truth layer-1 triple (upper, lower, upper - lower) at the QA patch.

    With ``substitution="left"`` only the upper-branch features are returned.
    """
    _check_substitution(substitution)
    size = qa.config.patch_size
    gl, gr = _crop(_as_batch(gt_left), size), _crop(_as_batch(gt_right), size)
    up, low, _ = first_layer(qa, Tensor(gl.data), Tensor(gr.data))
    if substitution == "left":
        return up.data
    return np.concatenate([up.data, low.data, up.data - low.data], axis=1)


def substituted_features(qa, feat_left, feat_right, substitution="paired"):
    _check_substitution(substitution)
    size = qa.config.patch_size
    fl = _crop(_as_batch(feat_left), size)
    fr = _crop(_as_batch(feat_right), size)
    if fl.shape[1] != qa.config.feature_width:
        raise ValueError(
            f"SR feature width {fl.shape[1]} != QA layer-1 width {qa.config.feature_width}"
        )
    pl = tg.avg_pool2x2(fl)
    if substitution == "left":
        return pl
    pr = tg.avg_pool2x2(fr)
    return tg.concat_channels([pl, pr, tg.subtract(pl, pr)])


def iqp_f_loss(qa, feat_left, feat_right, gt_left, gt_right, substitution="paired"):
    """SR last-layer features substituted for QA layer-1 features, vs ground truth."""
    sub = substituted_features(qa, feat_left, feat_right, substitution)
    target = substitution_target(qa, gt_left, gt_right, substitution)
    if sub.shape != target.shape:
        raise ValueError(f"substituted features {sub.shape} vs target {target.shape}")
    return tg.mse(sub, Tensor(target))


@dataclass
class IQPLossBreakdown:
    l_mse: float
    l_iqp_im: float
    l_iqp_f: float
    total: float
    weights: tuple
    total_tensor: Tensor = field(repr=False, default=None)

    def as_row(self):
        return [self.l_mse, self.l_iqp_im, self.l_iqp_f, self.total]


def pixel_mse(sr_l, sr_r, gt_l, gt_r):
    return tg.mse(tg.concat_channels([sr_l, sr_r]), Tensor(np.concatenate([gt_l, gt_r], axis=1)))


def combined_loss(qa, model, lr_left, lr_right, gt_left, gt_right, lambdas=LAMBDAS, scale=None,
                  substitution="paired"):
    """lambda0 * pixel MSE + lambda1 * image-level IQP + lambda2 * feature-level IQP."""
    lam0, lam1, lam2 = lambdas
    sr_l, sr_r, f_l, f_r = sr_forward_batch(model, lr_left, lr_right, scale)
    l_mse = pixel_mse(sr_l, sr_r, gt_left, gt_right)
    l_im = iqp_im_loss(qa, sr_l, sr_r, gt_left, gt_right)
    l_f = iqp_f_loss(qa, f_l, f_r, gt_left, gt_right, substitution)
    total = tg.scalar_combine([l_mse, l_im, l_f], [lam0, lam1, lam2])
    return IQPLossBreakdown(l_mse.item(), l_im.item(), l_f.item(), total.item(), (lam0, lam1, lam2), total)


# ------------------------------------------------------------------ training

@dataclass
class SRTrainResult:
    model: SRModel
    curves: list  # rows: epoch, l_mse, l_iqp_im, l_iqp_f, total
    first_batch: IQPLossBreakdown = None


class DivergenceError(RuntimeError):
    pass


def prepare_scenes(scenes, spec):
    """Crop each scene to a multiple of the scale and degrade it with a per-scene seed."""
    out = []
    for idx, scene in enumerate(scenes):
        hr = crop_to_multiple(scene, spec.scale)
        lr = degrade(hr, spec.with_seed(derive_seed(spec.seed, idx)))
        out.append((hr, lr))
    return out


def _sample_crop(rng, hr, scale, size):
    """Random crop anchor aligned to the scale grid."""
    rows = (hr.height - size) // scale
    cols = (hr.width - size) // scale
    return int(rng.integers(0, rows + 1)) * scale, int(rng.integers(0, cols + 1)) * scale


def train_sr(model, qa, scenes, spec, epochs, seed, lambdas=LAMBDAS, batch_size=4, lr=1e-4,
             patch_size=None, objective="combined", substitution="paired", log=None):
    """Adam on the combined objective over aligned HR/LR crops.

    ``objective="mse"`` builds only the pixel-MSE graph (the reference
    baseline); IQP components are then logged as NaN.
    """
    if objective not in ("combined", "mse"):
        raise ValueError("objective must be 'combined' or 'mse'")
    _check_substitution(substitution)
    qa = qa.frozen()
    scale = spec.scale
    size = qa.config.patch_size if patch_size is None else patch_size
    data = prepare_scenes(scenes, spec)
    state = tg.AdamState(lr=lr)
    curves = []
    first = None
    initial_total = None
    for epoch in range(epochs):
        rng = np.random.default_rng(derive_seed(seed, epoch))
        perm = rng.permutation(len(data))
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, len(perm), batch_size)):
            idx = perm[start : start + batch_size]
            hr_l, hr_r, lr_l, lr_r = [], [], [], []
            for i in idx:
                hr, lrp = data[i]
                top, left = _sample_crop(rng, hr, scale, size)
                hr_l.append(hr.left[:, top : top + size, left : left + size])
                hr_r.append(hr.right[:, top : top + size, left : left + size])
                s = size // scale
                lr_l.append(lrp.left[:, top // scale : top // scale + s, left // scale : left // scale + s])
                lr_r.append(lrp.right[:, top // scale : top // scale + s, left // scale : left // scale + s])
            hr_l, hr_r, lr_l, lr_r = map(np.stack, (hr_l, hr_r, lr_l, lr_r))
            for p in model.params.values():
                p.zero_grad()
            if objective == "combined":
                bd = combined_loss(qa, model, lr_l, lr_r, hr_l, hr_r, lambdas, scale, substitution)
                loss = bd.total_tensor
            else:
                sr_l, sr_r, _, _ = sr_forward_batch(model, lr_l, lr_r, scale)
                loss = pixel_mse(sr_l, sr_r, hr_l, hr_r)
                bd = IQPLossBreakdown(loss.item(), math.nan, math.nan, loss.item(), (1.0, 0.0, 0.0), loss)
            if first is None:
                first = bd
                initial_total = bd.total
            if not np.isfinite(bd.total) or bd.total > 10.0 * initial_total:
                raise DivergenceError(
                    f"SR training diverged at epoch {epoch}, batch {b}: total {bd.total!r} "
                    f"(initial {initial_total!r}; mse {bd.l_mse!r}, im {bd.l_iqp_im!r}, f {bd.l_iqp_f!r})"
                )
            loss.backward()
            tg.adam_step(model.params, state)
            sums += bd.as_row()
            n_batches += 1
        row = [epoch + 1, *(sums / n_batches)]
        curves.append(row)
        if log is not None:
            log(row)
    return SRTrainResult(model, curves, first)


def write_curves_csv(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "l_mse", "l_iqp_im", "l_iqp_f", "total"])
        for row in curves:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


# ----------------------------------------------------------------- evaluation

@dataclass
class EvalRow:
    model: str
    spec: str
    scene: int
    psnr: float
    ssim: float
    qa_score: float
    epe: float


def spec_label(spec):
    return f"x{spec.scale}_s{spec.blur_sigma:g}_n{spec.noise_level:g}"


def model_runner(model):
    """Callable ``(lr_pair, hr_pair) -> sr_pair`` for an SRModel."""
    return lambda lr, hr: super_resolve(model, lr)


def bicubic_runner(scale):
    def run(lr, hr):
        _, h, w = lr.shape
        return StereoPair(resize_bicubic(lr.left, w * scale, h * scale), resize_bicubic(lr.right, w * scale, h * scale))

    return run


def ground_truth_runner(lr, hr):
    return StereoPair(hr.left, hr.right)


def eval_sr(models, scenes, specs, qa, window=7, max_search=16):
    """One row per (model, spec, scene), in that nesting order."""
    rows = []
    for name, run in models.items():
        for spec in specs:
            data = prepare_scenes(scenes, spec)
            for idx, (hr, lrp) in enumerate(data):
                sr = run(lrp, hr)
                gt_disp = hr.disparity_gt if hr.disparity_gt is not None else np.zeros(hr.shape[1:])
                rows.append(
                    EvalRow(
                        name,
                        spec_label(spec),
                        idx,
                        psnr_pair(sr, hr).value,
                        ssim_pair(sr, hr).value,
                        qa_predict(qa, sr).score,
                        epe(block_match_disparity(sr, window, max_search), gt_disp).value,
                    )
                )
    return rows


def summarize(rows):
    """Mean metrics per (model, spec)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.model, r.spec), []).append(r)
    out = []
    for (model, spec), rs in groups.items():
        out.append(
            (model, spec, *(float(np.mean([getattr(r, f) for r in rs])) for f in ("psnr", "ssim", "qa_score", "epe")))
        )
    return out


def write_eval(path_csv, path_txt, rows):
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "spec", "scene", "psnr", "ssim", "qa_score", "epe"])
        for r in rows:
            w.writerow([r.model, r.spec, r.scene, repr(r.psnr), repr(r.ssim), repr(r.qa_score), repr(r.epe)])
    lines = [f"{'model':<12} {'spec':<16} {'PSNR':>8} {'SSIM':>7} {'QA':>7} {'EPE':>7}"]
    for model, spec, p, s, q, e in summarize(rows):
        lines.append(f"{model:<12} {spec:<16} {p:8.3f} {s:7.4f} {q:7.3f} {e:7.3f}")
    with open(path_txt, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return lines


# ----------------------------------------------------------------- storage

def save_sr(path, model):
    tg.save_weights(path, model.params)
    with open(str(path) + ".json", "w") as fh:
        json.dump(model.config.to_dict(), fh, indent=2, sort_keys=True)


def load_sr(path):
    with open(str(path) + ".json") as fh:
        cfg = SRConfig(**json.load(fh))
    arrays = tg.load_weights(path)
    return SRModel(cfg, {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})
