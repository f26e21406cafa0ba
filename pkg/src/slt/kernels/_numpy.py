"""Pure-numpy reference kernels.

Every function here has a twin of the same name in ``_numba``; the two are
required to agree bit for bit on the integer kernels and to float precision
on the rest (tests/test_kernels.py).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """[B,C,H,W] -> [B*OH*OW, C*kh*kw] patch matrix."""
    B, C, H, W = x.shape
    oh = conv_out_size(H, kh, stride, pad)
    ow = conv_out_size(W, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # [B, C, OH, OW, kh, kw] -> [B, OH, OW, C, kh, kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * oh * ow, C * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols, x_shape, kh, kw, stride, pad):
    B, C, H, W = x_shape
    oh = conv_out_size(H, kh, stride, pad)
    ow = conv_out_size(W, kw, stride, pad)
    g = cols.reshape(B, oh, ow, C, kh, kw)
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def lif_forward(inputs, lam, gain, v_th, v_reset):
    """Scan the LIF recurrence over axis 0 of a [T, N] current array.

    Returns the pre-reset potentials U, the spikes S and the final
    post-reset potential V. V starts at ``v_reset``.
    """
    T, N = inputs.shape
    lam = np.float32(lam)
    gain = np.float32(gain)
    v_th = np.float32(v_th)
    v_reset = np.float32(v_reset)
    u = np.empty_like(inputs)
    s = np.empty_like(inputs)
    v = np.full(N, v_reset, dtype=np.float32)
    for t in range(T):
        u_t = lam * v + gain * inputs[t]
        s_t = (u_t >= v_th).astype(np.float32)
        u[t] = u_t
        s[t] = s_t
        v = u_t * (np.float32(1.0) - s_t) + v_reset * s_t
    return u, s, v


def lif_backward(grad_s, u, s, lam, gain, v_th, v_reset, width):
    """Backprop-through-time for ``lif_forward`` with a triangle surrogate."""
    T, N = grad_s.shape
    lam = np.float32(lam)
    gain = np.float32(gain)
    v_th = np.float32(v_th)
    v_reset = np.float32(v_reset)
    width = np.float32(width)
    one = np.float32(1.0)
    grad_i = np.empty_like(grad_s)
    carry = np.zeros(N, dtype=np.float32)
    for t in range(T - 1, -1, -1):
        sg = np.maximum(np.float32(0.0), one - np.abs(u[t] - v_th) / width)
        g_u = grad_s[t] * sg + carry * ((one - s[t]) + (v_reset - u[t]) * sg)
        grad_i[t] = gain * g_u
        carry = lam * g_u
    return grad_i


def synops_dense(x, mask):
    """Accumulate count of a masked [out, in] layer on binary inputs [M, in]."""
    active_in = x.sum(axis=0, dtype=np.int64)
    fan_out = mask.sum(axis=0, dtype=np.int64)
    return int(active_in @ fan_out)


def synops_conv(x, mask, stride, pad):
    O, C, kh, kw = mask.shape
    cols = im2col(x, kh, kw, stride, pad)
    active = cols.sum(axis=0, dtype=np.int64)
    fan_out = mask.reshape(O, -1).sum(axis=0, dtype=np.int64)
    return int(active @ fan_out)


def bin_events(t, x, y, p, T, H, W):
    frames = np.zeros((T, 2, H, W), dtype=np.float32)
    if len(t) == 0:
        return frames
    t0 = t[0]
    span = t[-1] - t0
    if span == 0:
        bins = np.zeros(len(t), dtype=np.int64)
    else:
        bins = np.minimum(T - 1, ((t - t0) * T) // span)
    frames[bins, p, y, x] = 1.0
    return frames
