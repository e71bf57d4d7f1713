"""Convolution kernel backend selection.

The compiled extension is preferred when importable; the numpy im2col
fallback is always available. `SPIKEPOSE_NUMPY_ONLY=1` forces the
fallback. Both backends are single-threaded and dtype-preserving.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from . import kernels_numpy

try:
    from . import _convkernels  # type: ignore[attr-defined]
except ImportError:
    _convkernels = None

_FORCE_NUMPY = os.environ.get("SPIKEPOSE_NUMPY_ONLY", "").strip().lower() in {"1", "true", "yes"}

_active = kernels_numpy if (_FORCE_NUMPY or _convkernels is None) else _convkernels


def available_backends() -> list[str]:
    names = ["numpy"]
    if _convkernels is not None:
        names.append("compiled")
    return names


def backend_name() -> str:
    return "compiled" if _active is _convkernels else "numpy"


def set_backend(name: str) -> None:
    global _active
    if name == "numpy":
        _active = kernels_numpy
    elif name == "compiled":
        if _convkernels is None:
            raise RuntimeError("compiled kernels are not available in this build")
        _active = _convkernels
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextmanager
def use_backend(name: str):
    prev = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _as_kernel_array(a: np.ndarray) -> np.ndarray:
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float32)
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, stride: int, padding: int) -> np.ndarray:
    return _active.conv2d_forward(_as_kernel_array(x), _as_kernel_array(w),
                                  stride, padding)


def conv2d_backward_input(gout, w, stride: int, padding: int,
                          in_h: int, in_w: int) -> np.ndarray:
    return _active.conv2d_backward_input(_as_kernel_array(gout), _as_kernel_array(w),
                                         stride, padding, in_h, in_w)


def conv2d_backward_weight(gout, x, stride: int, padding: int,
                           kh: int, kw: int) -> np.ndarray:
    return _active.conv2d_backward_weight(_as_kernel_array(gout), _as_kernel_array(x),
                                          stride, padding, kh, kw)
