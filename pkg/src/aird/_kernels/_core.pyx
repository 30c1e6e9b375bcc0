# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: patch extraction, its adjoint, and max pooling.

Loop orders mirror the pure-numpy fallback exactly so both backends produce
bitwise-identical results (same gather order, same scatter accumulation
order, same tie policy).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def conv_out_size(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def im2col(cnp.ndarray[cnp.float64_t, ndim=4] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cols = np.zeros((b * oh * ow, c * kh * kw))
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x)
    cdef double[:, ::1] cv = cols
    cdef Py_ssize_t bi, ci, oy, ox, i, j, iy, ix, row, col
    for bi in range(b):
        for oy in range(oh):
            for ox in range(ow):
                row = (bi * oh + oy) * ow + ox
                for ci in range(c):
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            col = (ci * kh + i) * kw + j
                            cv[row, col] = xv[bi, ci, iy, ix]
    return cols


def col2im(cnp.ndarray[cnp.float64_t, ndim=2] cols, int b, int c, int h, int w,
           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    cdef double[:, ::1] cv = np.ascontiguousarray(cols)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t bi, ci, oy, ox, i, j, row, col
    # kernel-offset-major accumulation, matching the fallback's loop order
    for i in range(kh):
        for j in range(kw):
            for bi in range(b):
                for ci in range(c):
                    col = (ci * kh + i) * kw + j
                    for oy in range(oh):
                        for ox in range(ow):
                            row = (bi * oh + oy) * ow + ox
                            ov[bi, ci, oy * stride + i, ox * stride + j] += cv[row, col]
    if pad:
        return np.ascontiguousarray(out[:, :, pad : pad + h, pad : pad + w])
    return out


def maxpool2d(cnp.ndarray[cnp.float64_t, ndim=4] x, int k, int stride):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros((b, c, oh, ow))
    cdef cnp.ndarray[cnp.int64_t, ndim=4] arg = np.zeros((b, c, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x)
    cdef double[:, :, :, ::1] ov = out
    cdef cnp.int64_t[:, :, :, ::1] av = arg
    cdef Py_ssize_t bi, ci, oy, ox, i, j
    cdef double best, v
    cdef Py_ssize_t besti
    for bi in range(b):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    best = xv[bi, ci, oy * stride, ox * stride]
                    besti = 0
                    for i in range(k):
                        for j in range(k):
                            v = xv[bi, ci, oy * stride + i, ox * stride + j]
                            if v > best:
                                best = v
                                besti = i * k + j
                    ov[bi, ci, oy, ox] = best
                    av[bi, ci, oy, ox] = besti
    return out, arg


def maxpool2d_backward(cnp.ndarray[cnp.float64_t, ndim=4] gout,
                       cnp.ndarray[cnp.int64_t, ndim=4] arg, int k, int stride,
                       int h, int w):
    cdef Py_ssize_t b = gout.shape[0], c = gout.shape[1]
    cdef Py_ssize_t oh = gout.shape[2], ow = gout.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] gx = np.zeros((b, c, h, w))
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gout)
    cdef cnp.int64_t[:, :, :, ::1] av = np.ascontiguousarray(arg)
    cdef double[:, :, :, ::1] xv = gx
    cdef Py_ssize_t bi, ci, oy, ox
    cdef cnp.int64_t a
    for bi in range(b):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    a = av[bi, ci, oy, ox]
                    xv[bi, ci, oy * stride + a // k, ox * stride + a % k] += gv[bi, ci, oy, ox]
    return gx
