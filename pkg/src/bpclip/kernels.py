"""Hot im2col/col2im kernels with a compiled core and a numpy fallback.

The compiled Cython extension (``bpclip._kernels``) is optional: if it was
not built, or ``BPCLIP_PURE_PYTHON=1`` is set, the pure-numpy versions are
used instead. Both implementations produce bitwise-identical results (the
col2im accumulation order is the same), which ``tests/test_kernels.py``
asserts and ``benchmarks/bench_kernels.py`` times.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

HAVE_COMPILED = _compiled is not None
_FORCE_FALLBACK = os.environ.get("BPCLIP_PURE_PYTHON", "") == "1"


def active_backend() -> str:
    return "compiled" if (HAVE_COMPILED and not _FORCE_FALLBACK) else "numpy"


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col_numpy(x, kh, kw, sh, sw, ph, pw):
    """Extract conv patches: (B,C,H,W) -> (B, OH*OW, C*KH*KW)."""
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    b, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im_numpy(cols, x_shape, kh, kw, sh, sw, ph, pw):
    """Scatter-add conv patches back: inverse map of im2col for gradients."""
    b, c, h, w = x_shape
    oh = _out_size(h, kh, sh, ph)
    ow = _out_size(w, kw, sw, pw)
    xp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    c6 = cols.reshape(b, oh, ow, c, kh, kw)
    for ki in range(kh):
        for kj in range(kw):
            xp[:, :, ki:ki + sh * oh:sh, kj:kj + sw * ow:sw] += c6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    if ph or pw:
        return np.ascontiguousarray(xp[:, :, ph:ph + h, pw:pw + w])
    return xp


def _is_pointwise(kh, kw, ph, pw):
    return kh == 1 and kw == 1 and ph == 0 and pw == 0


def im2col(x, kh, kw, sh, sw, ph, pw):
    x = np.ascontiguousarray(x)
    if _is_pointwise(kh, kw, ph, pw):
        # 1x1 kernels need no patch extraction, only a strided reshape
        b, c = x.shape[:2]
        sub = x[:, :, ::sh, ::sw]
        return np.ascontiguousarray(sub.transpose(0, 2, 3, 1).reshape(b, -1, c))
    if HAVE_COMPILED and not _FORCE_FALLBACK:
        return _compiled.im2col(x, kh, kw, sh, sw, ph, pw)
    return im2col_numpy(x, kh, kw, sh, sw, ph, pw)


def col2im(cols, x_shape, kh, kw, sh, sw, ph, pw):
    cols = np.ascontiguousarray(cols)
    if _is_pointwise(kh, kw, ph, pw):
        b, c, h, w = x_shape
        oh = _out_size(h, 1, sh, 0)
        ow = _out_size(w, 1, sw, 0)
        out = np.zeros(x_shape, dtype=cols.dtype)
        out[:, :, ::sh, ::sw] = cols.reshape(b, oh, ow, c).transpose(0, 3, 1, 2)
        return out
    if HAVE_COMPILED and not _FORCE_FALLBACK:
        return _compiled.col2im(cols, x_shape, kh, kw, sh, sw, ph, pw)
    return col2im_numpy(cols, x_shape, kh, kw, sh, sw, ph, pw)
