import numpy as np
import pytest

from slt import kernels
from slt.tensor import Tensor, backward


def numerical_grad(f, arrays, h=1e-3):
    """Central differences of scalar ``f(*arrays)`` w.r.t. every array (float64 accumulation)."""
    grads = []
    for a in arrays:
        g = np.zeros(a.shape, dtype=np.float64)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            hi = float(f(*arrays))
            a[i] = old - h
            lo = float(f(*arrays))
            a[i] = old
            g[i] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_op_grad(build, arrays, seed=0, h=1e-3):
    """Compare tape gradients of ``sum(build(*tensors) * R)`` against central differences."""
    arrays = [np.asarray(a, dtype=np.float32).copy() for a in arrays]
    out_shape = build(*[Tensor(a) for a in arrays]).shape
    r = np.random.default_rng(seed).normal(size=out_shape).astype(np.float32)

    def f(*arrs):
        out = build(*[Tensor(a) for a in arrs])
        return float((out.data.astype(np.float64) * r).sum())

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    loss = (out * Tensor(r)).sum()
    backward(loss)
    numeric = numerical_grad(f, arrays, h)
    return max(rel_err(l.grad, n) for l, n in zip(leaves, numeric))


@pytest.fixture(params=kernels.available_backends())
def each_backend(request):
    with kernels.use_backend(request.param):
        yield request.param


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
