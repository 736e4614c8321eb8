"""Three-branch stereo SR quality-assessment network.

The upper and lower branches see the left and right views. The middle branch
sees their difference at layer 1 and, from layer 2 on, the concatenation of
the previous layer's upper-minus-lower feature difference with its own
previous features. Global average pooling of the three branch outputs feeds
a two-layer fully connected head.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorgrad as tg
from .degradation import derive_seed
from .rankmos import Voter
from .quality import HIGHER
from .stereo_image import StereoPair, extract_patches, patch_grid
from .tensorgrad import Tensor


@dataclass(frozen=True)
class QAConfig:
    widths: tuple = (16, 32, 64, 64)
    kernel: int = 3
    stride: int = 2
    head: tuple = (64, 1)
    slope: float = 0.1
    patch_size: int = 120
    in_channels: int = 3
    share_branches: bool = False
    mode: str = "nr"
    output_bias: float = 5.5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "head", tuple(int(w) for w in self.head))
        if self.head[-1] != 1:
            raise ValueError("the head must end in a single output unit")
        if self.mode not in ("nr", "fr"):
            raise ValueError("mode must be 'nr' or 'fr'")

    @property
    def depth(self):
        return len(self.widths)

    @property
    def feature_width(self):
        return self.widths[0]

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["head"] = list(self.head)
        return d


TINY_QA = QAConfig(widths=(4, 8), head=(8, 1), patch_size=16)


@dataclass
class QAModel:
    config: QAConfig
    params: dict = field(default_factory=dict)

    def branch_param(self, branch, layer, kind):
        if branch == "low" and self.config.share_branches:
            branch = "up"
        return self.params[f"{branch}.conv{layer}.{kind}"]

    def state(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def frozen(self):
        """Copy whose parameters take no gradient."""
        return QAModel(self.config, {k: Tensor(v.data, name=k) for k, v in self.params.items()})


def init_qa(config=QAConfig(), seed=0):
    """He-normal convolution/dense weights, zero biases, output bias at the label midpoint."""
    rng = np.random.default_rng(derive_seed(seed, 0x51A))
    params = {}
    k = config.kernel
    branches = ("up", "mid") if config.share_branches else ("up", "low", "mid")
    for branch in branches:
        cin = config.in_channels
        for i, cout in enumerate(config.widths, start=1):
            if branch == "mid" and i > 1:
                cin = 2 * config.widths[i - 2]
            fan_in = cin * k * k
            params[f"{branch}.conv{i}.w"] = rng.standard_normal((cout, cin, k, k)) * math.sqrt(2.0 / fan_in)
            params[f"{branch}.conv{i}.b"] = np.zeros(cout)
            cin = cout
    d = 3 * config.widths[-1]
    for i, m in enumerate(config.head, start=1):
        params[f"head.fc{i}.w"] = rng.standard_normal((d, m)) * math.sqrt(2.0 / d)
        params[f"head.fc{i}.b"] = np.zeros(m)
        d = m
    params[f"head.fc{len(config.head)}.b"][:] = config.output_bias
    return QAModel(config, {name: Tensor(v, requires_grad=True, name=name) for name, v in params.items()})


def _conv(model, branch, layer, x):
    cfg = model.config
    w = model.branch_param(branch, layer, "w")
    b = model.branch_param(branch, layer, "b")
    return tg.leaky_relu(tg.conv2d(x, w, b, stride=cfg.stride, pad=cfg.kernel // 2), cfg.slope)


def first_layer(model, left, right):
    """Post-activation layer-1 features (upper, lower, middle)."""
    left, right = tg.as_tensor(left), tg.as_tensor(right)
    up = _conv(model, "up", 1, left)
    low = _conv(model, "low", 1, right)
    mid = _conv(model, "mid", 1, tg.subtract(left, right))
    return up, low, mid


def features(model, left, right):
    """f_IQA: channel concatenation of the three layer-1 feature maps."""
    return tg.concat_channels(first_layer(model, left, right))


def qa_forward(model, left, right):
    """Score a batch of (N, C, P, P) view tensors.

    Returns ``(y, f_iqa)`` with y of shape (N, 1).
    """
    cfg = model.config
    left, right = tg.as_tensor(left), tg.as_tensor(right)
    if left.ndim != 4 or left.shape[2:] != (cfg.patch_size, cfg.patch_size):
        raise ValueError(f"expected (N, C, {cfg.patch_size}, {cfg.patch_size}) patches, got {left.shape}")
    up, low, mid = first_layer(model, left, right)
    f_iqa = tg.concat_channels([up, low, mid])
    for i in range(2, cfg.depth + 1):
        df = tg.subtract(up, low)
        mid_in = tg.concat_channels([df, mid])
        up = _conv(model, "up", i, up)
        low = _conv(model, "low", i, low)
        mid = _conv(model, "mid", i, mid_in)
    v = tg.concat_channels([_as4(tg.global_avg_pool(t)) for t in (up, low, mid)])
    h = _flatten(v)
    n_fc = len(cfg.head)
    for i in range(1, n_fc + 1):
        h = tg.dense(h, model.params[f"head.fc{i}.w"], model.params[f"head.fc{i}.b"])
        if i < n_fc:
            h = tg.leaky_relu(h, cfg.slope)
    return h, f_iqa


def _as4(t):
    # (N, C) -> (N, C, 1, 1) view for channel concatenation
    out = Tensor(t.data[:, :, None, None], requires_grad=t.requires_grad, _parents=(t,), _op="reshape")
    if out.requires_grad:
        out._backward = lambda g: (g[:, :, 0, 0],)
    return out


def _flatten(t):
    n = t.shape[0]
    out = Tensor(t.data.reshape(n, -1), requires_grad=t.requires_grad, _parents=(t,), _op="reshape")
    if out.requires_grad:
        shape = t.shape
        out._backward = lambda g: (g.reshape(shape),)
    return out


# ------------------------------------------------------------------ inputs

def model_inputs(model, pair, reference=None):
    """(C, H, W) views arranged for the configured mode (NR or FR)."""
    if model.config.mode == "fr":
        if reference is None:
            raise ValueError("FR mode needs the reference pair")
        return pair.left - reference.left, pair.right - reference.right
    return pair.left, pair.right


def stack_patches(patches):
    return (
        np.stack([p.left for p in patches]),
        np.stack([p.right for p in patches]),
    )


# ------------------------------------------------------------------ training

@dataclass
class QATrainResult:
    model: QAModel
    losses: list


def patch_dataset(pairs, labels, patch_size=120, stride=None, references=None, mode="nr"):
    """Expand whole-image labels onto their patches."""
    out = []
    for idx, (pair, z) in enumerate(zip(pairs, labels)):
        if mode == "fr":
            ref = references[idx]
            pair = StereoPair(pair.left - ref.left, pair.right - ref.right)
        for patch in extract_patches(pair, patch_size, stride):
            out.append((patch, float(z)))
    return out


def qa_train(model, dataset, epochs, seed, batch_size=8, lr=1e-4, log=None):
    """Minimize mean (y - z)^2 with Adam over a seeded mini-batch schedule."""
    if not dataset:
        raise ValueError("empty dataset")
    if batch_size > len(dataset):
        raise ValueError(f"batch size {batch_size} exceeds dataset size {len(dataset)}")
    labels = np.array([z for _, z in dataset])
    if labels.min() < 1 or labels.max() > 10:
        raise ValueError("labels must lie in [1, 10]")
    lefts = np.stack([p.left for p, _ in dataset])
    rights = np.stack([p.right for p, _ in dataset])
    state = tg.AdamState(lr=lr)
    losses = []
    for epoch in range(epochs):
        perm = np.random.default_rng(derive_seed(seed, epoch)).permutation(len(dataset))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(perm), batch_size)):
            idx = perm[start : start + batch_size]
            for p in model.params.values():
                p.zero_grad()
            y, _ = qa_forward(model, lefts[idx], rights[idx])
            loss = tg.mse(y, labels[idx, None])
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite QA loss at epoch {epoch}, batch {b}")
            loss.backward()
            tg.adam_step(model.params, state)
            total += loss.item() * len(idx)
            count += len(idx)
        losses.append(total / count)
        if log is not None:
            log(epoch, losses[-1])
    return QATrainResult(model, losses)


# ----------------------------------------------------------------- inference

@dataclass(frozen=True)
class ScorePrediction:
    score: float
    patch_scores: tuple
    n_patches: int


def score_patches(model, lefts, rights, batch_size=16):
    out = []
    for start in range(0, len(lefts), batch_size):
        y, _ = qa_forward(model, lefts[start : start + batch_size], rights[start : start + batch_size])
        out.extend(float(v) for v in y.data[:, 0])
    return out


def qa_predict(model, pair, patch_size=None, stride=None, reference=None):
    """Mean of per-patch scores over the patch grid (exactly rounded sum)."""
    patch_size = model.config.patch_size if patch_size is None else patch_size
    if min(pair.height, pair.width) < patch_size:
        raise ValueError(f"image {pair.height}x{pair.width} smaller than patch size {patch_size}")
    left, right = model_inputs(model, pair, reference)
    anchors = patch_grid(pair.height, pair.width, patch_size, stride)
    lefts = np.stack([left[:, r : r + patch_size, c : c + patch_size] for r, c in anchors])
    rights = np.stack([right[:, r : r + patch_size, c : c + patch_size] for r, c in anchors])
    scores = score_patches(model, lefts, rights)
    return ScorePrediction(math.fsum(scores) / len(scores), tuple(scores), len(scores))


def qa_as_voter(model, name="qa_network"):
    """Higher-better voter scoring the distorted pair (reference used only in FR mode)."""

    def fn(dist, ref):
        return qa_predict(model, dist, reference=ref if model.config.mode == "fr" else None).score

    return Voter(name, HIGHER, fn)


# ----------------------------------------------------------------- storage

def save_qa(path, model):
    tg.save_weights(path, model.params)
    with open(str(path) + ".json", "w") as fh:
        json.dump(model.config.to_dict(), fh, indent=2, sort_keys=True)


def load_qa(path):
    with open(str(path) + ".json") as fh:
        cfg = QAConfig(**json.load(fh))
    arrays = tg.load_weights(path)
    return QAModel(cfg, {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})
