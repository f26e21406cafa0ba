import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slt import kernels
from slt.kernels import _numpy

numba_only = pytest.mark.skipif("numba" not in kernels.available_backends(), reason="numba missing")


def both(fn_name, *args):
    out = {}
    for b in kernels.available_backends():
        with kernels.use_backend(b):
            out[b] = getattr(kernels, fn_name)(*args)
    return out


def test_env_flag_selects_numpy():
    code = "from slt import kernels; print(kernels.backend())"
    env = dict(os.environ, SLT_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_use_backend_restores():
    before = kernels.backend()
    with kernels.use_backend("numpy"):
        assert kernels.backend() == "numpy"
    assert kernels.backend() == before


@numba_only
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(3, 7), st.sampled_from([1, 3]),
       st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**31 - 1))
def test_im2col_col2im_agree(B, C, H, k, stride, pad, seed):
    if (H + 2 * pad - k) % stride:
        return
    x = np.random.default_rng(seed).normal(size=(B, C, H, H)).astype(np.float32)
    cols = both("im2col", x, k, k, stride, pad)
    np.testing.assert_array_equal(cols["numpy"], cols["numba"])
    back = both("col2im", cols["numpy"], x.shape, k, k, stride, pad)
    np.testing.assert_array_equal(back["numpy"], back["numba"])


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
    cols = _numpy.im2col(x, 3, 3, 1, 1)
    y = rng.normal(size=cols.shape).astype(np.float32)
    lhs = float((cols.astype(np.float64) * y).sum())
    rhs = float((x.astype(np.float64) * _numpy.col2im(y, x.shape, 3, 3, 1, 1)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-5)


@numba_only
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 20), st.floats(0.1, 1.0), st.sampled_from([1.0, 0.5]),
       st.integers(0, 2**31 - 1))
def test_lif_kernels_agree(T, N, lam, gain, seed):
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-0.5, 1.5, size=(T, N)).astype(np.float32)
    fw = both("lif_forward", inputs, lam, gain, 1.0, 0.0)
    for a, b in zip(fw["numpy"], fw["numba"]):
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)
    u, s, _ = fw["numpy"]
    g = rng.normal(size=(T, N)).astype(np.float32)
    bw = both("lif_backward", g, u, s, lam, gain, 1.0, 0.0, 1.0)
    np.testing.assert_allclose(bw["numpy"], bw["numba"], rtol=1e-5, atol=1e-6)


@numba_only
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_synops_kernels_agree(M, fan_in, fan_out, seed):
    rng = np.random.default_rng(seed)
    x = (rng.random((M, fan_in)) < 0.4).astype(np.float32)
    m = (rng.random((fan_out, fan_in)) < 0.6).astype(np.float32)
    res = both("synops_dense", x, m)
    assert res["numpy"] == res["numba"]
    xc = (rng.random((2, 2, 5, 5)) < 0.4).astype(np.float32)
    mc = (rng.random((3, 2, 3, 3)) < 0.6).astype(np.float32)
    res = both("synops_conv", xc, mc, 1, 1)
    assert res["numpy"] == res["numba"]


@numba_only
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 50), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_bin_events_agree(n, T, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, 1000, size=n)).astype(np.int64)
    x, y = rng.integers(0, 6, size=n), rng.integers(0, 5, size=n)
    p = rng.integers(0, 2, size=n)
    res = both("bin_events", t, x, y, p, T, 5, 6)
    np.testing.assert_array_equal(res["numpy"], res["numba"])
