"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback backend with the same contract as the compiled extension:
NCHW inputs, OIHW weights, cross-correlation, dtype-preserving
(float32 or float64), single output allocation per call.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_dim(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """(N,C,OH,OW,KH,KW) view of the padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, c, h, width = x.shape
    o, _, kh, kw = w.shape
    oh, ow = _out_dim(h, kh, stride, padding), _out_dim(width, kw, stride, padding)
    win = _windows(x, kh, kw, stride, padding)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))


def conv2d_backward_input(gout: np.ndarray, w: np.ndarray, stride: int, padding: int,
                          in_h: int, in_w: int) -> np.ndarray:
    n, o, oh, ow = gout.shape
    _, c, kh, kw = w.shape
    gcols = gout.transpose(0, 2, 3, 1).reshape(n * oh * ow, o) @ w.reshape(o, -1)
    gcols = gcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    gx_pad = np.zeros((n, c, in_h + 2 * padding, in_w + 2 * padding), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            gx_pad[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, :, i, j]
    if padding:
        return np.ascontiguousarray(gx_pad[:, :, padding:padding + in_h,
                                           padding:padding + in_w])
    return gx_pad


def conv2d_backward_weight(gout: np.ndarray, x: np.ndarray, stride: int, padding: int,
                           kh: int, kw: int) -> np.ndarray:
    n, o, oh, ow = gout.shape
    c = x.shape[1]
    win = _windows(x, kh, kw, stride, padding)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    gw = gout.transpose(1, 0, 2, 3).reshape(o, n * oh * ow) @ cols
    return np.ascontiguousarray(gw.reshape(o, c, kh, kw))
