"""Numpy reference kernels.

These mirror ``_ckernels.pyx`` operation for operation. Accumulation order in
``col2im`` (kernel offsets in row-major order) and integer SAD arithmetic keep
the two backends bit-identical.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride):
    """(N, C, H, W) padded input -> (N, C*k*k, Ho*Wo) column matrix."""
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, C, Ho, Wo, k, k) -> (N, C, k, k, Ho, Wo)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, shape, k, stride):
    n, c, h, w = shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros(shape, dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * (ho - 1) + 1 : stride,
                kj : kj + stride * (wo - 1) + 1 : stride] += cols[:, :, ki, kj]
    return out


def sad_disparity(left, right, window, max_search):
    """Integer SAD block matching on (C, H, W) int32 views.

    Returns an int32 (H, W) map; pixels closer than window//2 to the border
    stay 0. Candidate d is only considered while the right-view window is in
    bounds. Ties resolve to the smallest d.
    """
    _, h, w = left.shape
    r = window // 2
    left = left.astype(np.int64)
    right = right.astype(np.int64)
    big = np.iinfo(np.int64).max
    best = np.full((h, w), big, dtype=np.int64)
    disp = np.zeros((h, w), dtype=np.int32)
    for d in range(max_search + 1):
        if d > w - 1:
            break
        diff = np.zeros((h, w), dtype=np.int64)
        diff[:, d:] = np.abs(left[:, :, d:] - right[:, :, : w - d]).sum(axis=0)
        # box sum over the window using exact integer prefix sums
        cs = np.zeros((h + 1, w + 1), dtype=np.int64)
        cs[1:, 1:] = diff.cumsum(axis=0).cumsum(axis=1)
        box = np.full((h, w), big, dtype=np.int64)
        if h - 2 * r <= 0 or w - 2 * r <= 0:
            continue
        box[r : h - r, r : w - r] = (
            cs[2 * r + 1 :, 2 * r + 1 :]
            - cs[: h - 2 * r, 2 * r + 1 :]
            - cs[2 * r + 1 :, : w - 2 * r]
            + cs[: h - 2 * r, : w - 2 * r]
        )
        # right window must stay in bounds: x - d - r >= 0
        box[:, : min(w, r + d)] = big
        better = box < best
        best[better] = box[better]
        disp[better] = d
    return disp
