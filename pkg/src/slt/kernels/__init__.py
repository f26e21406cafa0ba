"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``SLT_NUMBA`` (``1`` by default,
``0`` forces numpy) and can be switched at runtime with ``set_backend``.
If numba cannot be imported the numpy path is used regardless.
"""
import contextlib
import os

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

BACKENDS = ("numpy", "numba")


def available_backends():
    return tuple(b for b in BACKENDS if b == "numpy" or _numba is not None)


def _initial_backend():
    flag = os.environ.get("SLT_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off") or _numba is None:
        return "numpy"
    return "numba"


_impl = None
_active = None


def set_backend(name):
    global _impl, _active
    if name not in available_backends():
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _impl = _numpy if name == "numpy" else _numba
    _active = name


def backend():
    return _active


@contextlib.contextmanager
def use_backend(name):
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


set_backend(_initial_backend())


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(x, kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    return _impl.col2im(cols, x_shape, kh, kw, stride, pad)


def lif_forward(inputs, lam, gain, v_th, v_reset):
    return _impl.lif_forward(inputs, lam, gain, v_th, v_reset)


def lif_backward(grad_s, u, s, lam, gain, v_th, v_reset, width):
    return _impl.lif_backward(grad_s, u, s, lam, gain, v_th, v_reset, width)


def synops_dense(x, mask):
    return _impl.synops_dense(x, mask)


def synops_conv(x, mask, stride, pad):
    return _impl.synops_conv(x, mask, stride, pad)


def bin_events(t, x, y, p, T, H, W):
    return _impl.bin_events(t, x, y, p, T, H, W)


conv_out_size = _numpy.conv_out_size
