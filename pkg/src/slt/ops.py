"""Differentiable operations on :class:`~slt.tensor.Tensor`.

Broadcasting is deliberately narrow: an operand may be a Python scalar, or
(for addition) a tensor whose shape is a suffix of the other operand's
shape, which covers bias and position-embedding adds over leading batch
axes. Anything else is a :class:`DimensionError`.
"""
import numbers

import numpy as np

from . import kernels
from .errors import DimensionError, GradientError
from .tensor import Tensor, as_tensor

_node = Tensor._node


def _is_scalar(x):
    return isinstance(x, numbers.Real) and not isinstance(x, bool)


def _suffix_axes(big, small):
    """Leading axes of ``big`` that ``small`` is broadcast over, or None."""
    if small == big:
        return ()
    k = len(small)
    if k < len(big) and big[len(big) - k:] == small:
        return tuple(range(len(big) - k))
    return None


def add(a, b):
    if _is_scalar(b):
        c = np.float32(b)
        return _node(a.data + c, (a,), lambda g: (g,), "add_scalar")
    b = as_tensor(b)
    axes = _suffix_axes(a.shape, b.shape)
    if axes is None:
        axes_rev = _suffix_axes(b.shape, a.shape)
        if axes_rev is None:
            raise DimensionError(f"add: shapes {a.shape} and {b.shape} are not compatible")
        return add(b, a)
    if axes:
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "add_bcast")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b):
    if _is_scalar(b):
        return add(a, -float(b))
    return add(a, neg(as_tensor(b)))


def mul(a, b):
    if _is_scalar(b):
        c = np.float32(b)
        return _node(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def matmul(a, b):
    """Matrix product; leading (batch) axes must match exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} @ {b.shape} do not agree")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _node(ad @ bd, (a, b), backward, "matmul")


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {a.shape} -> {shape}") from exc
    src = a.shape
    return _node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None):
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _node(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    axes = _norm_axis(axis, a.ndim)
    src = a.shape
    out = a.data.sum(axis=axes, dtype=np.float32)

    def backward(g):
        return np.broadcast_to(np.expand_dims(g, axes), src).copy()

    return _node(np.asarray(out, dtype=np.float32), (a,), backward, "sum")


def mean(a, axis=None):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum(a, axes), 1.0 / count)


def index_select(a, indices, axis):
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    n = a.shape[axis]
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= n)):
        raise IndexError(f"index_select: indices out of range for axis of length {n}")
    src = a.shape

    def backward(g):
        full = np.zeros(src, dtype=np.float32)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        return full

    out = np.ascontiguousarray(np.take(a.data, idx, axis=axis))
    return _node(out, (a,), backward, "index_select")


def repeat_time(a, T):
    """Stack ``T`` copies of ``a`` along a new leading axis."""
    out = np.broadcast_to(a.data, (T,) + a.shape).copy()
    return _node(out, (a,), lambda g: (g.sum(axis=0),), "repeat_time")


def relu(a):
    d = a.data
    return _node(np.maximum(d, np.float32(0.0)), (a,), lambda g: (g * (d > 0),), "relu")


def conv2d(x, k, stride=1, padding=0):
    """2-D cross-correlation of [B,C,H,W] with [O,C,kh,kw] (no kernel flip)."""
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D operands, got {x.shape} and {k.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = k.shape
    if C != Ck:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {Ck}")
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d: stride must be >= 1 and padding >= 0")
    for size, ks in ((H, kh), (W, kw)):
        span = size + 2 * padding - ks
        if span < 0 or span % stride:
            raise DimensionError(
                f"conv2d: output size ({size}+2*{padding}-{ks})/{stride}+1 is not integral"
            )
    oh = (H + 2 * padding - kh) // stride + 1
    ow = (W + 2 * padding - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    kmat = k.data.reshape(O, -1)
    out = (cols @ kmat.T).reshape(B, oh, ow, O).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * oh * ow, O)
        gk = (gm.T @ cols).reshape(k.shape) if k.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(gm @ kmat, x.shape, kh, kw, stride, padding)
        return gx, gk

    return _node(out, (x, k), backward, "conv2d")


def avg_pool2d(x, size=2):
    B, C, H, W = x.shape
    if H % size or W % size:
        raise DimensionError(f"avg_pool2d: {H}x{W} not divisible by {size}")
    out = x.data.reshape(B, C, H // size, size, W // size, size).mean(axis=(3, 5))
    scale = np.float32(1.0 / (size * size))

    def backward(g):
        up = np.repeat(np.repeat(g, size, axis=2), size, axis=3)
        return up * scale

    return _node(out.astype(np.float32), (x,), backward, "avg_pool2d")


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy of [B,K] logits against integer labels."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise DimensionError(f"cross_entropy: {B} logits rows but labels {labels.shape}")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(B), labels].mean()
    probs = np.exp(logp)

    def backward(g):
        d = probs.copy()
        d[np.arange(B), labels] -= 1.0
        return (d * (float(g) / B)).astype(np.float32)

    return _node(np.asarray(loss, dtype=np.float32), (logits,), backward, "cross_entropy")


def custom_grad(forward_fn, backward_fn, inputs, op="custom"):
    """Build a node whose forward and backward rules are supplied by the caller.

    ``forward_fn(*arrays)`` returns the output array. ``backward_fn(grad,
    *arrays)`` returns one gradient per input (a bare array is accepted for
    a single input); each must match its input's shape.
    """
    inputs = tuple(as_tensor(t) for t in inputs)
    arrays = tuple(t.data for t in inputs)
    out = np.asarray(forward_fn(*arrays), dtype=np.float32)

    def backward(g):
        grads = backward_fn(g, *arrays)
        if not isinstance(grads, tuple):
            grads = (grads,)
        if len(grads) != len(inputs):
            raise GradientError(f"{op}: expected {len(inputs)} gradients, got {len(grads)}")
        for t, gr in zip(inputs, grads):
            if gr is not None and np.shape(gr) != t.shape:
                raise GradientError(
                    f"{op}: gradient shape {np.shape(gr)} != input shape {t.shape}"
                )
        return grads

    return _node(out, inputs, backward, op)


def linear(x, w):
    """Apply a [out, in] weight to the last axis of ``x`` (any leading axes)."""
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight fan-in {w.shape[1]}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    out = matmul(flat, transpose(w))
    return reshape(out, lead + (w.shape[0],)) if x.ndim != 2 else out

