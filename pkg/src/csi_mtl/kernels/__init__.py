"""3x3 same-padding convolution kernels with backend selection at import.

The compiled extension (`csi_mtl.kernels._native`) is used when it has been
built; otherwise the numpy fallback takes over transparently. Set
``CSI_MTL_KERNELS=python`` to force the fallback (e.g. for benchmarking) or
``CSI_MTL_KERNELS=native`` to fail loudly when the extension is missing.
"""

import os

import numpy as np

from ..errors import InvalidArgumentError
from . import fallback as _fallback

_choice = os.environ.get("CSI_MTL_KERNELS", "auto").lower()
if _choice not in ("auto", "native", "python"):
    raise InvalidArgumentError(f"CSI_MTL_KERNELS must be auto|native|python, got {_choice!r}")

_impl = None
if _choice in ("auto", "native"):
    try:
        from . import _native as _impl
    except ImportError:
        if _choice == "native":
            raise
        _impl = None
if _impl is None:
    _impl = _fallback

BACKEND = _impl.BACKEND


def available_backends():
    names = ["python"]
    try:
        from . import _native  # noqa: F401

        names.insert(0, "native")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name == "python":
        return _fallback
    if name == "native":
        from . import _native

        return _native
    raise InvalidArgumentError(f"unknown kernel backend {name!r}")


def _check(x, w, b):
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise InvalidArgumentError("conv2d expects x (B,C,H,W) and w (O,C,3,3)")
    if x.shape[1] != w.shape[1]:
        raise InvalidArgumentError(f"channel mismatch: x has {x.shape[1]}, w expects {w.shape[1]}")
    if x.dtype != w.dtype or (b is not None and b.dtype != x.dtype):
        raise InvalidArgumentError("conv2d operands must share one dtype")
    if x.dtype not in (np.float32, np.float64):
        raise InvalidArgumentError("conv2d supports float32/float64 only")


def _resolve(impl):
    if impl is None:
        return _impl
    if isinstance(impl, str):
        return get_backend(impl)
    return impl


def conv2d_forward(x, w, b, impl=None):
    """y[n,o] = b[o] + sum_c x[n,c] * w[o,c] (3x3 cross-correlation, pad 1)."""
    _check(x, w, b)
    impl = _resolve(impl)
    if impl is _fallback:
        return _fallback.conv2d_forward(x, w, b)
    y = np.empty((x.shape[0], w.shape[0], x.shape[2], x.shape[3]), dtype=x.dtype)
    impl.conv2d_forward(x, w, b, y)
    return y


def conv2d_backward_input(dy, w, impl=None):
    impl = _resolve(impl)
    if impl is _fallback:
        return _fallback.conv2d_backward_input(dy, w)
    dx = np.empty((dy.shape[0], w.shape[1], dy.shape[2], dy.shape[3]), dtype=dy.dtype)
    impl.conv2d_backward_input(dy, w, dx)
    return dx


def conv2d_backward_params(dy, x, impl=None):
    impl = _resolve(impl)
    if impl is _fallback:
        return _fallback.conv2d_backward_params(dy, x)
    dw = np.empty((dy.shape[1], x.shape[1], 3, 3), dtype=dy.dtype)
    db = np.empty(dy.shape[1], dtype=dy.dtype)
    impl.conv2d_backward_params(dy, x, dw, db)
    return dw, db
