"""Pure-numpy kernels: patch extraction, its adjoint, and max pooling.

These are the fallback implementations used when the compiled extension is
unavailable. They must stay bitwise-equivalent to the compiled versions:
gathers are exact, and every scatter-add accumulates contributions in the
same order (kernel offset major, then batch/channel/output position).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def conv_out_size(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def im2col(x, kh, kw, stride, pad):
    """[B,C,H,W] -> [B*OH*OW, C*kh*kw] patch matrix (row-major patches)."""
    b, c, h, w = x.shape
    oh, ow = conv_out_size(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols, b, c, h, w, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add patch rows back onto the image grid."""
    oh, ow = conv_out_size(h, w, kh, kw, stride, pad)
    blk = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += blk[:, :, i, j]
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(out)


def maxpool2d(x, k, stride):
    """Window max over [B,C,H,W]; returns (values, flat in-window argmax).

    Ties resolve to the first (row-major) window position.
    """
    b, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(b, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1).astype(np.int64)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2d_backward(gout, arg, k, stride, h, w):
    b, c, oh, ow = gout.shape
    gx = np.zeros((b, c, h, w))
    bi, ci, ohi, owi = np.indices((b, c, oh, ow))
    ih = ohi * stride + arg // k
    iw = owi * stride + arg % k
    np.add.at(gx, (bi, ci, ih, iw), gout)
    return gx
