# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels.

Signatures and results match ``fmdnn._kernels_py`` exactly.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline (Py_ssize_t, Py_ssize_t) _valid_range(Py_ssize_t j, Py_ssize_t pad, Py_ssize_t stride,
                                                  Py_ssize_t W, Py_ssize_t Wo) noexcept nogil:
    # output columns ox with 0 <= ox*stride + j - pad < W
    cdef Py_ssize_t lo = 0, hi
    if pad > j:
        lo = (pad - j + stride - 1) // stride
    if W - 1 + pad - j < 0:
        return lo, lo
    hi = (W - 1 + pad - j) // stride + 1
    if hi > Wo:
        hi = Wo
    if hi < lo:
        hi = lo
    return lo, hi


def im2col(const double[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((B, C * k * k, Ho * Wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, row, lo, hi
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        lo, hi = _valid_range(j, pad, stride, W, Wo)
                        for oy in range(Ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= H:
                                continue
                            for ox in range(lo, hi):
                                out[b, row, oy * Wo + ox] = x[b, c, iy, ox * stride + j - pad]
    return out_arr


def col2im(const double[:, :, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t B = cols.shape[0]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_arr = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, row, lo, hi
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(k):
                    for j in range(k):
                        row = (c * k + i) * k + j
                        lo, hi = _valid_range(j, pad, stride, W, Wo)
                        for oy in range(Ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= H:
                                continue
                            for ox in range(lo, hi):
                                out[b, c, iy, ox * stride + j - pad] += cols[b, row, oy * Wo + ox]
    return out_arr


def maxpool_forward(const double[:, :, :, ::1] x, Py_ssize_t window, Py_ssize_t stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H - window) // stride + 1
    cdef Py_ssize_t Wo = (W - window) // stride + 1
    out_arr = np.empty((B, C, Ho, Wo), dtype=np.float64)
    idx_arr = np.empty((B, C, Ho, Wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, c, oy, ox, i, j, y0, x0, best_pos
    cdef double best, v
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(Ho):
                    y0 = oy * stride
                    for ox in range(Wo):
                        x0 = ox * stride
                        best = x[b, c, y0, x0]
                        best_pos = y0 * W + x0
                        for i in range(window):
                            for j in range(window):
                                v = x[b, c, y0 + i, x0 + j]
                                # strict comparison keeps the first maximum on ties
                                if v > best:
                                    best = v
                                    best_pos = (y0 + i) * W + x0 + j
                        out[b, c, oy, ox] = best
                        idx[b, c, oy, ox] = best_pos
    return out_arr, idx_arr


def maxpool_backward(const double[:, :, :, ::1] grad, const cnp.int64_t[:, :, :, ::1] index,
                     Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t B = grad.shape[0], C = grad.shape[1]
    cdef Py_ssize_t Ho = grad.shape[2], Wo = grad.shape[3]
    out_arr = np.zeros((B, C, H * W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, oy, ox
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(Ho):
                    for ox in range(Wo):
                        out[b, c, index[b, c, oy, ox]] += grad[b, c, oy, ox]
    return out_arr.reshape(B, C, H, W)
