# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see _kernels_py.py for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(double[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    out_arr = np.empty((n, c * k * k, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, row, iy
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oy in range(ho):
                            iy = oy * stride + ki
                            for ox in range(wo):
                                out[b, row, oy * wo + ox] = x[b, ch, iy, ox * stride + kj]
    return out_arr


def col2im(cols, shape, int k, int stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    cdef double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(n, c * k * k, ho * wo)
    out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, row, iy
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ch * k + ki) * k + kj
                        for oy in range(ho):
                            iy = oy * stride + ki
                            for ox in range(wo):
                                out[b, ch, iy, ox * stride + kj] += cv[b, row, oy * wo + ox]
    return out_arr


def sad_disparity(left, right, int window, int max_search):
    cdef int[:, :, ::1] lv = np.ascontiguousarray(left, dtype=np.int32)
    cdef int[:, :, ::1] rv = np.ascontiguousarray(right, dtype=np.int32)
    cdef Py_ssize_t c = lv.shape[0], h = lv.shape[1], w = lv.shape[2]
    cdef Py_ssize_t r = window // 2
    disp_arr = np.zeros((h, w), dtype=np.int32)
    best_arr = np.full((h, w), -1, dtype=np.int64)
    cs_arr = np.zeros((h + 1, w + 1), dtype=np.int64)
    cdef int[:, ::1] disp = disp_arr
    cdef long long[:, ::1] best = best_arr
    cdef long long[:, ::1] cs = cs_arr
    cdef Py_ssize_t y, x, d, ch, y0, x0
    cdef long long acc, cost
    cdef int a
    if h - 2 * r <= 0 or w - 2 * r <= 0:
        return disp_arr
    with nogil:
        for d in range(max_search + 1):
            if d > w - 1:
                break
            # inclusive 2-D prefix sums of the channel-summed absolute difference
            for y in range(h):
                acc = 0
                for x in range(w):
                    if x >= d:
                        for ch in range(c):
                            a = lv[ch, y, x] - rv[ch, y, x - d]
                            acc += a if a >= 0 else -a
                    cs[y + 1, x + 1] = cs[y, x + 1] + acc
            for y in range(r, h - r):
                y0 = y - r
                for x in range(r + d, w - r):
                    x0 = x - r
                    cost = (cs[y0 + window, x0 + window] - cs[y0, x0 + window]
                            - cs[y0 + window, x0] + cs[y0, x0])
                    if best[y, x] < 0 or cost < best[y, x]:
                        best[y, x] = cost
                        disp[y, x] = <int>d
    return disp_arr
