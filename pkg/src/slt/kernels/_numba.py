"""numba-compiled kernels; same contracts as ``_numpy``."""
import numpy as np
from numba import njit


@njit(cache=True)
def _out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


@njit(cache=True)
def _im2col(x, kh, kw, stride, pad):
    B, C, H, W = x.shape
    oh = _out(H, kh, stride, pad)
    ow = _out(W, kw, stride, pad)
    cols = np.zeros((B * oh * ow, C * kh * kw), dtype=x.dtype)
    for b in range(B):
        for r in range(oh):
            for q in range(ow):
                row = (b * oh + r) * ow + q
                for c in range(C):
                    for i in range(kh):
                        yy = r * stride + i - pad
                        if yy < 0 or yy >= H:
                            continue
                        for j in range(kw):
                            xx = q * stride + j - pad
                            if xx < 0 or xx >= W:
                                continue
                            cols[row, (c * kh + i) * kw + j] = x[b, c, yy, xx]
    return cols


@njit(cache=True)
def _col2im(cols, B, C, H, W, kh, kw, stride, pad):
    oh = _out(H, kh, stride, pad)
    ow = _out(W, kw, stride, pad)
    out = np.zeros((B, C, H, W), dtype=cols.dtype)
    # (i, j) outermost per pixel so the summation order matches the numpy path
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    for r in range(oh):
                        yy = r * stride + i - pad
                        if yy < 0 or yy >= H:
                            continue
                        for q in range(ow):
                            xx = q * stride + j - pad
                            if xx < 0 or xx >= W:
                                continue
                            out[b, c, yy, xx] += cols[(b * oh + r) * ow + q, (c * kh + i) * kw + j]
    return out


def im2col(x, kh, kw, stride, pad):
    return _im2col(np.ascontiguousarray(x), kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    B, C, H, W = x_shape
    return _col2im(np.ascontiguousarray(cols), B, C, H, W, kh, kw, stride, pad)


@njit(cache=True)
def _lif_forward(inputs, lam, gain, v_th, v_reset):
    T, N = inputs.shape
    u = np.empty_like(inputs)
    s = np.empty_like(inputs)
    v = np.empty(N, dtype=inputs.dtype)
    one = np.float32(1.0)
    for n in range(N):
        vn = v_reset
        for t in range(T):
            ut = lam * vn + gain * inputs[t, n]
            st = one if ut >= v_th else np.float32(0.0)
            u[t, n] = ut
            s[t, n] = st
            vn = ut * (one - st) + v_reset * st
        v[n] = vn
    return u, s, v


@njit(cache=True)
def _lif_backward(grad_s, u, s, lam, gain, v_th, v_reset, width):
    T, N = grad_s.shape
    grad_i = np.empty_like(grad_s)
    one = np.float32(1.0)
    zero = np.float32(0.0)
    for n in range(N):
        carry = zero
        for t in range(T - 1, -1, -1):
            sg = one - abs(u[t, n] - v_th) / width
            if sg < zero:
                sg = zero
            g_u = grad_s[t, n] * sg + carry * ((one - s[t, n]) + (v_reset - u[t, n]) * sg)
            grad_i[t, n] = gain * g_u
            carry = lam * g_u
    return grad_i


def lif_forward(inputs, lam, gain, v_th, v_reset):
    f = np.float32
    return _lif_forward(np.ascontiguousarray(inputs), f(lam), f(gain), f(v_th), f(v_reset))


def lif_backward(grad_s, u, s, lam, gain, v_th, v_reset, width):
    f = np.float32
    return _lif_backward(
        np.ascontiguousarray(grad_s), u, s, f(lam), f(gain), f(v_th), f(v_reset), f(width)
    )


@njit(cache=True)
def _synops_dense(x, mask):
    M, n_in = x.shape
    n_out = mask.shape[0]
    fan_out = np.zeros(n_in, dtype=np.int64)
    for o in range(n_out):
        for i in range(n_in):
            if mask[o, i] != 0:
                fan_out[i] += 1
    total = 0
    for m in range(M):
        for i in range(n_in):
            if x[m, i] != 0:
                total += fan_out[i]
    return total


@njit(cache=True)
def _synops_conv(x, mask, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = mask.shape
    oh = _out(H, kh, stride, pad)
    ow = _out(W, kw, stride, pad)
    fan_out = np.zeros((C, kh, kw), dtype=np.int64)
    for o in range(O):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    if mask[o, c, i, j] != 0:
                        fan_out[c, i, j] += 1
    total = 0
    for b in range(B):
        for c in range(C):
            for r in range(oh):
                for q in range(ow):
                    for i in range(kh):
                        yy = r * stride + i - pad
                        if yy < 0 or yy >= H:
                            continue
                        for j in range(kw):
                            xx = q * stride + j - pad
                            if xx < 0 or xx >= W:
                                continue
                            if x[b, c, yy, xx] != 0:
                                total += fan_out[c, i, j]
    return total


def synops_dense(x, mask):
    return int(_synops_dense(np.ascontiguousarray(x), np.ascontiguousarray(mask)))


def synops_conv(x, mask, stride, pad):
    return int(_synops_conv(np.ascontiguousarray(x), np.ascontiguousarray(mask), stride, pad))


@njit(cache=True)
def _bin_events(t, x, y, p, T, H, W):
    frames = np.zeros((T, 2, H, W), dtype=np.float32)
    n = t.shape[0]
    if n == 0:
        return frames
    t0 = t[0]
    span = t[n - 1] - t0
    for e in range(n):
        b = 0
        if span > 0:
            b = ((t[e] - t0) * T) // span
            if b > T - 1:
                b = T - 1
        frames[b, p[e], y[e], x[e]] = 1.0
    return frames


def bin_events(t, x, y, p, T, H, W):
    return _bin_events(
        np.ascontiguousarray(t, dtype=np.int64),
        np.ascontiguousarray(x, dtype=np.int64),
        np.ascontiguousarray(y, dtype=np.int64),
        np.ascontiguousarray(p, dtype=np.int64),
        T, H, W,
    )
