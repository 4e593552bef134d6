# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col/col2im kernels (f32/f64).

col2im accumulates in (ki, kj)-major order so results are bitwise identical
to the numpy fallback in bpclip.kernels.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int sh, int sw, int ph, int pw):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t ow = (w + 2 * pw - kw) // sw + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((b, oh * ow, c * kh * kw), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, oi, oj, ki, kj, row, col, pos
    with nogil:
        for bi in range(b):
            for oi in range(oh):
                for oj in range(ow):
                    pos = oi * ow + oj
                    for ci in range(c):
                        for ki in range(kh):
                            row = oi * sh + ki - ph
                            if row < 0 or row >= h:
                                continue
                            for kj in range(kw):
                                col = oj * sw + kj - pw
                                if col < 0 or col >= w:
                                    continue
                                out[bi, pos, (ci * kh + ki) * kw + kj] = x[bi, ci, row, col]
    return out_arr


def col2im(floating[:, :, ::1] cols, x_shape, int kh, int kw, int sh, int sw, int ph, int pw):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t ow = (w + 2 * pw - kw) // sw + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, oi, oj, ki, kj, row, col
    with nogil:
        for ki in range(kh):
            for kj in range(kw):
                for bi in range(b):
                    for ci in range(c):
                        for oi in range(oh):
                            row = oi * sh + ki - ph
                            if row < 0 or row >= h:
                                continue
                            for oj in range(ow):
                                col = oj * sw + kj - pw
                                if col < 0 or col >= w:
                                    continue
                                out[bi, ci, row, col] += cols[bi, oi * ow + oj, (ci * kh + ki) * kw + kj]
    return out_arr
