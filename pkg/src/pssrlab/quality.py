"""Reference quality metrics, stereo difference maps and block-matching disparity."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .degradation import gaussian_kernel1d
from .stereo_image import to_bytes

HIGHER = "higher-better"
LOWER = "lower-better"
PSNR_CAP = 100.0


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    polarity: str

    def __post_init__(self):
        if self.polarity not in (HIGHER, LOWER):
            raise ValueError(f"unknown polarity {self.polarity!r}")

    def __float__(self):
        return float(self.value)


def write_metrics_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value", "polarity"])
        for r in results:
            w.writerow([r.name, repr(float(r.value)), r.polarity])


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b):
    """10 log10(1 / MSE) for [0, 1] data; identical inputs give the 100 dB cap."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    err = np.mean((a - b) ** 2)
    value = PSNR_CAP if err == 0 else min(PSNR_CAP, 10.0 * np.log10(1.0 / err))
    return MetricResult("psnr", float(value), HIGHER)


def psnr_pair(x, y):
    """PSNR over both views jointly."""
    return psnr(np.stack([x.left, x.right]), np.stack([y.left, y.right]))


def luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] == 1:
        return img[0]
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _filter_valid(x, k):
    n = len(k)
    h, w = x.shape
    tmp = sum(k[i] * x[i : h - n + 1 + i, :] for i in range(n))
    return sum(k[i] * tmp[:, i : w - n + 1 + i] for i in range(n))


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean single-scale SSIM over all fully-covered 11x11 Gaussian windows."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    x, y = (luma(a), luma(b)) if a.ndim == 3 else (a, b)
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} smaller than the {window}x{window} SSIM window")
    k = gaussian_kernel1d(sigma, window)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = _filter_valid(x, k), _filter_valid(y, k)
    sxx = _filter_valid(x * x, k) - mx * mx
    syy = _filter_valid(y * y, k) - my * my
    sxy = _filter_valid(x * y, k) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return MetricResult("ssim", float(np.mean(num / den)), HIGHER)


def ssim_pair(x, y):
    return MetricResult("ssim", 0.5 * (ssim(x.left, y.left).value + ssim(x.right, y.right).value), HIGHER)


def diff_map(pair):
    """Left minus right, in [-1, 1]."""
    return pair.left - pair.right


@dataclass(frozen=True)
class DisparityMap:
    disparity: np.ndarray
    valid: np.ndarray
    max_search: Optional[int] = None

    @classmethod
    def from_ground_truth(cls, disp):
        disp = np.asarray(disp, dtype=np.float64)
        return cls(disp, np.isfinite(disp))


def block_match_disparity(pair, window=7, max_search=16):
    """Integer SAD block matching on 8-bit quantized views.

    Searches leftward in the right view; ties go to the smaller disparity.
    Pixels whose window or full search range leaves the image are invalid.
    """
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    _, h, w = pair.shape
    if max_search >= w:
        raise ValueError(f"max_search {max_search} must be < width {w}")
    left = to_bytes(pair.left).astype(np.int32)
    right = to_bytes(pair.right).astype(np.int32)
    disp = _backend.sad_disparity(left, right, window, max_search).astype(np.float64)
    r = window // 2
    valid = np.zeros((h, w), dtype=bool)
    valid[r : h - r, r + max_search : w - r] = True
    return DisparityMap(disp, valid, max_search)


def epe(est, gt):
    """Mean absolute disparity error over pixels valid in both maps."""
    if not isinstance(gt, DisparityMap):
        gt = DisparityMap.from_ground_truth(gt)
    if not isinstance(est, DisparityMap):
        est = DisparityMap.from_ground_truth(est)
    _same_shape(est.disparity, gt.disparity)
    mask = est.valid & gt.valid
    if not mask.any():
        raise ValueError("EPE: no pixel is valid in both maps")
    return MetricResult("epe", float(np.mean(np.abs(est.disparity[mask] - gt.disparity[mask]))), LOWER)
