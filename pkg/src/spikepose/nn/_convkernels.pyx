# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: direct single-threaded loops.

Same contract as kernels_numpy: NCHW x OIHW cross-correlation with
stride/zero-padding, float32 or float64. Kernel tap loops hoist the
valid output ranges so the hot loops carry no bounds branches.
"""

import numpy as np

cimport cython


ctypedef fused floating:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t a, Py_ssize_t s) noexcept nogil:
    # smallest i >= 0 with i*s >= a
    if a <= 0:
        return 0
    return (a + s - 1) // s


cdef inline Py_ssize_t _hi(Py_ssize_t b, Py_ssize_t s, Py_ssize_t n) noexcept nogil:
    # exclusive end: largest i with i*s <= b, clamped to n
    cdef Py_ssize_t e
    if b < 0:
        return 0
    e = b // s + 1
    return e if e < n else n


cdef void _fwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
               floating[:, :, :, ::1] out, Py_ssize_t s, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = out.shape[1], OH = out.shape[2], OW = out.shape[3]
    cdef Py_ssize_t KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, oc, ic, kh, kw, oh, ow, ih, base
    cdef Py_ssize_t oh0, oh1, ow0, ow1
    cdef floating wv
    for n in range(N):
        for oc in range(O):
            for ic in range(C):
                for kh in range(KH):
                    oh0 = _lo(p - kh, s)
                    oh1 = _hi(H - 1 + p - kh, s, OH)
                    for kw in range(KW):
                        ow0 = _lo(p - kw, s)
                        ow1 = _hi(W - 1 + p - kw, s, OW)
                        wv = w[oc, ic, kh, kw]
                        for oh in range(oh0, oh1):
                            ih = oh * s - p + kh
                            base = -p + kw
                            for ow in range(ow0, ow1):
                                out[n, oc, oh, ow] += wv * x[n, ic, ih, ow * s + base]


cdef void _bwd_input(floating[:, :, :, ::1] gout, floating[:, :, :, ::1] w,
                     floating[:, :, :, ::1] gx, Py_ssize_t s, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t N = gx.shape[0], C = gx.shape[1], H = gx.shape[2], W = gx.shape[3]
    cdef Py_ssize_t O = gout.shape[1], OH = gout.shape[2], OW = gout.shape[3]
    cdef Py_ssize_t KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, oc, ic, kh, kw, oh, ow, ih, base
    cdef Py_ssize_t oh0, oh1, ow0, ow1
    cdef floating wv
    for n in range(N):
        for oc in range(O):
            for ic in range(C):
                for kh in range(KH):
                    oh0 = _lo(p - kh, s)
                    oh1 = _hi(H - 1 + p - kh, s, OH)
                    for kw in range(KW):
                        ow0 = _lo(p - kw, s)
                        ow1 = _hi(W - 1 + p - kw, s, OW)
                        wv = w[oc, ic, kh, kw]
                        for oh in range(oh0, oh1):
                            ih = oh * s - p + kh
                            base = -p + kw
                            for ow in range(ow0, ow1):
                                gx[n, ic, ih, ow * s + base] += wv * gout[n, oc, oh, ow]


cdef void _bwd_weight(floating[:, :, :, ::1] gout, floating[:, :, :, ::1] x,
                      floating[:, :, :, ::1] gw, Py_ssize_t s, Py_ssize_t p) noexcept nogil:
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = gout.shape[1], OH = gout.shape[2], OW = gout.shape[3]
    cdef Py_ssize_t KH = gw.shape[2], KW = gw.shape[3]
    cdef Py_ssize_t n, oc, ic, kh, kw, oh, ow, ih, base
    cdef Py_ssize_t oh0, oh1, ow0, ow1
    cdef floating acc
    for oc in range(O):
        for ic in range(C):
            for kh in range(KH):
                oh0 = _lo(p - kh, s)
                oh1 = _hi(H - 1 + p - kh, s, OH)
                for kw in range(KW):
                    ow0 = _lo(p - kw, s)
                    ow1 = _hi(W - 1 + p - kw, s, OW)
                    acc = 0
                    for n in range(N):
                        for oh in range(oh0, oh1):
                            ih = oh * s - p + kh
                            base = -p + kw
                            for ow in range(ow0, ow1):
                                acc += x[n, ic, ih, ow * s + base] * gout[n, oc, oh, ow]
                    gw[oc, ic, kh, kw] += acc


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   int stride, int padding):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t OH = (H + 2 * padding - KH) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * padding - KW) // stride + 1
    if floating is float:
        out_arr = np.zeros((N, O, OH, OW), dtype=np.float32)
    else:
        out_arr = np.zeros((N, O, OH, OW), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr
    with nogil:
        _fwd(x, w, out, stride, padding)
    return out_arr


def conv2d_backward_input(floating[:, :, :, ::1] gout, floating[:, :, :, ::1] w,
                          int stride, int padding, int in_h, int in_w):
    cdef Py_ssize_t N = gout.shape[0], C = w.shape[1]
    if floating is float:
        gx_arr = np.zeros((N, C, in_h, in_w), dtype=np.float32)
    else:
        gx_arr = np.zeros((N, C, in_h, in_w), dtype=np.float64)
    cdef floating[:, :, :, ::1] gx = gx_arr
    with nogil:
        _bwd_input(gout, w, gx, stride, padding)
    return gx_arr


def conv2d_backward_weight(floating[:, :, :, ::1] gout, floating[:, :, :, ::1] x,
                           int stride, int padding, int kh, int kw):
    cdef Py_ssize_t O = gout.shape[1], C = x.shape[1]
    if floating is float:
        gw_arr = np.zeros((O, C, kh, kw), dtype=np.float32)
    else:
        gw_arr = np.zeros((O, C, kh, kw), dtype=np.float64)
    cdef floating[:, :, :, ::1] gw = gw_arr
    with nogil:
        _bwd_weight(gout, x, gw, stride, padding)
    return gw_arr
