"""Distortion generators: resampling, Gaussian blur, seeded noise, catalogs."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .stereo_image import StereoPair, to_bytes

SCALES = (2, 3, 4, 5, 6, 8)
UPSAMPLERS = ("nearest", "bilinear", "bicubic")
BD_KSIZE = 15

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


# ------------------------------------------------------------------- SplitMix64

def _mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *parts):
    """Fold integer ``parts`` into ``seed`` with SplitMix64 finalizers."""
    h = int(seed) & _MASK64
    for p in parts:
        h = _mix64((h ^ _mix64((int(p) + _GAMMA) & _MASK64)) & _MASK64)
    return h


def splitmix64(seed, n):
    """First ``n`` outputs of the SplitMix64 stream seeded with ``seed``."""
    gamma = np.uint64(_GAMMA)
    with np.errstate(over="ignore"):
        z = np.uint64(int(seed) & _MASK64) + gamma * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def gaussian_noise(seed, n):
    """``n`` standard normals from SplitMix64 uniforms via Box-Muller."""
    m = (n + 1) // 2
    u = (splitmix64(seed, 2 * m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z[:n]


# ------------------------------------------------------------------- resampling

def keys_cubic(x, a=-0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    return np.where(
        x <= 1.0,
        (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0,
        np.where(x < 2.0, a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a, 0.0),
    )


@lru_cache(maxsize=256)
def resample_matrix(n_in, n_out, method="bicubic"):
    """(n_out, n_in) weights with center-aligned sampling and edge clamping."""
    if n_in < 1 or n_out < 1:
        raise ValueError("resample dimensions must be >= 1")
    mat = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for d in range(n_out):
        s = (d + 0.5) * ratio - 0.5
        if method == "nearest":
            idx = min(max(int(np.floor((d + 0.5) * ratio)), 0), n_in - 1)
            mat[d, idx] = 1.0
            continue
        base = int(np.floor(s))
        if method == "bicubic":
            taps = range(base - 1, base + 3)
            weights = keys_cubic([s - t for t in taps])
        elif method == "bilinear":
            taps = (base, base + 1)
            frac = s - base
            weights = (1.0 - frac, frac)
        else:
            raise ValueError(f"unknown upsampler {method!r}")
        for t, wgt in zip(taps, weights):
            mat[d, min(max(t, 0), n_in - 1)] += wgt
    mat.setflags(write=False)
    return mat


def resize(img, out_w, out_h, method="bicubic"):
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    wy = resample_matrix(h, out_h, method)
    wx = resample_matrix(w, out_w, method)
    out = np.matmul(np.matmul(wy, img), wx.T)
    return np.clip(out, 0.0, 1.0)


def resize_bicubic(img, out_w, out_h):
    """Keys (a = -0.5) bicubic resize, clipped to [0, 1]."""
    return resize(img, out_w, out_h, "bicubic")


# ----------------------------------------------------------------------- blur

def gaussian_kernel1d(sigma, ksize):
    if ksize % 2 == 0 or ksize < 1:
        raise ValueError(f"Gaussian kernel size must be odd and positive, got {ksize}")
    r = ksize // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def separable_filter(img, kernel):
    """Correlate each channel with ``kernel`` along rows then columns, edge-clamped."""
    r = len(kernel) // 2
    _, h, w = img.shape
    p = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="edge")
    tmp = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        tmp += kv * p[:, i : i + h, :]
    p = np.pad(tmp, ((0, 0), (0, 0), (r, r)), mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        out += kv * p[:, :, i : i + w]
    return out


def gaussian_blur(img, sigma, ksize=BD_KSIZE):
    if ksize % 2 == 0:
        raise ValueError(f"Gaussian kernel size must be odd, got {ksize}")
    img = np.asarray(img, dtype=np.float64)
    if sigma <= 0:
        return img.copy()
    return separable_filter(img, gaussian_kernel1d(sigma, ksize))


# ---------------------------------------------------------------------- noise

def add_noise(img, level, seed):
    """Additive Gaussian noise with std ``level / 255``, clipped to [0, 1]."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    img = np.asarray(img, dtype=np.float64)
    if level == 0:
        return img.copy()
    z = gaussian_noise(seed, img.size).reshape(img.shape)
    return np.clip(img + (level / 255.0) * z, 0.0, 1.0)


# ------------------------------------------------------------------ pipelines

@dataclass(frozen=True)
class DegradationSpec:
    scale: int = 4
    blur_sigma: float = 0.0
    noise_level: float = 0.0
    upsampler: str = "bicubic"
    seed: int = 0
    blur_ksize: int = BD_KSIZE

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale {self.scale} not in {SCALES}")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")
        if not 0 <= self.noise_level <= 30:
            raise ValueError("noise_level must lie in [0, 30]")
        if self.upsampler not in UPSAMPLERS:
            raise ValueError(f"upsampler must be one of {UPSAMPLERS}")

    def with_seed(self, seed):
        return DegradationSpec(self.scale, self.blur_sigma, self.noise_level, self.upsampler, seed, self.blur_ksize)


def bd_spec(sigma, scale=4, seed=0):
    """Blur-downscale degradation with the 15x15 Gaussian kernel."""
    return DegradationSpec(scale=scale, blur_sigma=sigma, seed=seed)


def crop_to_multiple(pair, scale):
    h = pair.height - pair.height % scale
    w = pair.width - pair.width % scale
    return pair.crop(0, 0, h, w)


def degrade(pair, spec):
    """Blur, bicubic downscale, then add noise to each view.

    Both views use the same recipe; the noise streams are split per view
    from ``spec.seed``.
    """
    _, h, w = pair.shape
    if h % spec.scale or w % spec.scale:
        raise ValueError(f"HR size {h}x{w} not divisible by scale {spec.scale}; crop first")
    views = []
    for view_id, img in enumerate((pair.left, pair.right)):
        x = gaussian_blur(img, spec.blur_sigma, spec.blur_ksize) if spec.blur_sigma > 0 else img
        x = resize_bicubic(x, w // spec.scale, h // spec.scale)
        x = add_noise(x, spec.noise_level, derive_seed(spec.seed, view_id))
        views.append(x)
    return StereoPair(views[0], views[1])


def restore_naive(lr, spec):
    """Upsample an LR pair back to HR with ``spec.upsampler``."""
    _, h, w = lr.shape
    up = [resize(v, w * spec.scale, h * spec.scale, spec.upsampler) for v in (lr.left, lr.right)]
    return StereoPair(up[0], up[1])


def distorted_version(pair, spec):
    """HR-sized distorted pair on the 8-bit grid (what gets written to disk)."""
    out = restore_naive(degrade(pair, spec), spec)
    return StereoPair(to_bytes(out.left) / 255.0, to_bytes(out.right) / 255.0)


# -------------------------------------------------------------------- catalog

DEFAULT_CATALOG = {
    "scales": [2, 3, 4],
    "blur_sigmas": [0.0, 0.7, 1.2],
    "noise_levels": [0.0, 15.0, 30.0],
    "upsamplers": ["bicubic"],
    "seed": 0,
}


@dataclass
class Catalog:
    specs: list
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.specs)

    def spec_for(self, i, j):
        """Version ``j`` of reference ``i`` with its per-entry noise seed."""
        return self.specs[j].with_seed(derive_seed(self.seed, i, j))

    def to_json(self):
        return json.dumps(self.config, indent=2, sort_keys=True)

    def describe(self):
        return [asdict(s) for s in self.specs]


def build_catalog(config=None):
    """Cartesian product scales x blur x noise x upsampler, in that nesting order."""
    config = dict(DEFAULT_CATALOG if config is None else config)
    keys = ("scales", "blur_sigmas", "noise_levels", "upsamplers")
    for k in keys:
        if k not in config or not config[k]:
            raise ValueError(f"catalog config needs a non-empty {k!r} list")
    unknown = set(config) - set(keys) - {"seed"}
    if unknown:
        raise ValueError(f"unknown catalog config keys: {sorted(unknown)}")
    config.setdefault("seed", 0)
    specs = [
        DegradationSpec(scale=int(s), blur_sigma=float(b), noise_level=float(n), upsampler=u)
        for s, b, n, u in itertools.product(*(config[k] for k in keys))
    ]
    return Catalog(specs, int(config["seed"]), config)


def load_catalog(path):
    with open(path) as fh:
        return build_catalog(json.load(fh))


def make_versions(ref, catalog, i):
    """All distorted versions of reference ``i``, in catalog order."""
    ref = crop_to_multiple(ref, int(np.lcm.reduce([s.scale for s in catalog.specs])))
    return [distorted_version(ref, catalog.spec_for(i, j)) for j in range(len(catalog))]
