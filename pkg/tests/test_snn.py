import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from slt.errors import ContractError, DegenerateMaskError, DimensionError
from slt.ops import index_select, reshape
from slt.snn import (LifParams, LifState, binarize_activations, binarize_weights, binary_gain,
                     lif_run, lif_step, surrogate_grad)
from slt.tensor import Tensor, backward

HALF = LifParams(lambda_decay=0.5)


def test_three_step_trace():
    spikes, trace = lif_run(Tensor(np.full((3, 1), 0.6)), HALF, return_trace=True)
    np.testing.assert_allclose(trace.u[:, 0], [0.6, 0.9, 1.05], atol=1e-6)
    np.testing.assert_array_equal(spikes.data[:, 0], [0, 0, 1])
    assert trace.v_final[0] == 0.0


def test_step_zero_input():
    s, st_ = lif_step(LifState.reset((1, 3), HALF), Tensor(np.zeros((1, 3))), HALF)
    assert not s.data.any() and not st_.v.data.any() and not st_.u.data.any()


def test_step_immediate_crossing():
    s, st_ = lif_step(LifState.reset((1, 1), HALF), Tensor([[1.5]]), HALF)
    assert st_.u.data[0, 0] == pytest.approx(1.5)
    assert s.data[0, 0] == 1.0 and st_.v.data[0, 0] == 0.0
    assert st_.step == 1


def test_step_shape_mismatch():
    with pytest.raises(DimensionError):
        lif_step(LifState.reset((1, 3), HALF), Tensor(np.zeros((1, 2))), HALF)


def test_coupled_gain():
    p = LifParams(lambda_decay=0.8, input_gain_mode="coupled")
    _, trace = lif_run(Tensor([[1.0]]), p, return_trace=True)
    assert trace.u[0, 0] == pytest.approx(0.2)


@pytest.mark.parametrize("kwargs", [dict(lambda_decay=0.0), dict(lambda_decay=1.5),
                                    dict(v_th=0.0, v_reset=0.0), dict(surrogate_width=0.0),
                                    dict(input_gain_mode="other")])
def test_params_validation(kwargs):
    with pytest.raises(ContractError):
        LifParams(**kwargs)


@pytest.mark.parametrize("u, expected", [(1.0, 1.0), (0.0, 0.0), (2.0, 0.0), (1.5, 0.5), (0.5, 0.5)])
def test_surrogate_triangle(u, expected):
    assert surrogate_grad(np.array([u]), LifParams())[0] == pytest.approx(expected)


def test_zero_input_never_spikes():
    assert not lif_run(Tensor(np.zeros((5, 2, 3))), LifParams()).data.any()


def test_run_requires_time_axis():
    with pytest.raises(ContractError):
        lif_run(Tensor(np.float32(1.0)), LifParams())


def test_single_step_run_equals_lif_step():
    x = np.random.default_rng(0).uniform(0, 2, size=(1, 4, 5)).astype(np.float32)
    run = lif_run(Tensor(x), LifParams()).data[0]
    step, _ = lif_step(LifState.reset((4, 5), LifParams()), Tensor(x[0]), LifParams())
    np.testing.assert_array_equal(run, step.data)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 8)),
              elements=st.floats(-3, 3, width=32)),
       st.floats(0.05, 1.0))
def test_run_matches_folded_steps(x, lam):
    """The fused kernel equals folding lif_step, spikes are binary and reset is exact."""
    p = LifParams(lambda_decay=lam)
    spikes, trace = lif_run(Tensor(x), p, return_trace=True)
    assert set(np.unique(spikes.data)) <= {0.0, 1.0}
    state = LifState.reset(x.shape[1:], p)
    for t in range(x.shape[0]):
        s, state = lif_step(state, Tensor(x[t]), p)
        np.testing.assert_array_equal(s.data, spikes.data[t])
        np.testing.assert_allclose(state.u.data, trace.u[t], rtol=1e-6, atol=1e-6)
        assert np.all(state.v.data[s.data == 1] == p.v_reset)
    np.testing.assert_allclose(state.v.data, trace.v_final, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("lam, current", [(0.5, 0.3), (0.9, 0.2), (0.8, -0.7)])
def test_geometric_convergence_without_threshold(lam, current):
    p = LifParams(lambda_decay=lam, v_th=math.inf)
    _, trace = lif_run(Tensor(np.full((100, 1), current)), p, return_trace=True)
    assert trace.v_final[0] == pytest.approx(current / (1 - lam), abs=1e-4)


def _folded_grad(x, p, g):
    leaf = Tensor(x, requires_grad=True)
    state = LifState.reset(x.shape[1:], p)
    out = []
    for t in range(x.shape[0]):
        s, state = lif_step(state, _slice(leaf, t), p)
        out.append(s)
    loss = None
    for t, s in enumerate(out):
        term = (s * Tensor(g[t])).sum()
        loss = term if loss is None else loss + term
    backward(loss)
    return leaf.grad


def _slice(t, i):
    return reshape(index_select(t, np.array([i]), axis=0), t.shape[1:])


@pytest.mark.parametrize("seed", range(5))
def test_bptt_kernel_matches_tape_through_steps(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1.2, size=(4, 6)).astype(np.float32)
    g = rng.normal(size=(4, 6)).astype(np.float32)
    p = LifParams(lambda_decay=0.7)
    leaf = Tensor(x, requires_grad=True)
    backward((lif_run(leaf, p) * Tensor(g)).sum())
    np.testing.assert_allclose(leaf.grad, _folded_grad(x, p, g), rtol=1e-5, atol=1e-6)


class TestBinarizeWeights:
    def test_formula(self):
        out = binarize_weights(Tensor([2.0, -3.0, 4.0]), np.array([1, 0, 1]))
        np.testing.assert_array_equal(out.data, [3, 0, 3])

    def test_all_positive_full_mask(self):
        w = np.array([0.5, 1.0, 2.5], dtype=np.float32)
        out = binarize_weights(Tensor(w), np.ones(3))
        np.testing.assert_allclose(out.data, np.full(3, w.mean()))

    def test_sign_zero_is_positive(self):
        out = binarize_weights(Tensor([-1.0, 0.0, 1.0]), np.ones(3))
        np.testing.assert_allclose(out.data, np.array([-1, 1, 1]) * 2 / 3, rtol=1e-6)

    def test_zero_mask(self):
        with pytest.raises(DegenerateMaskError):
            binarize_weights(Tensor([1.0, 2.0]), np.zeros(2))

    def test_straight_through_on_support(self):
        w = Tensor([2.0, -3.0, 4.0], requires_grad=True)
        backward((binarize_weights(w, np.array([1, 0, 1])) * Tensor([1.0, 2.0, 3.0])).sum())
        np.testing.assert_array_equal(w.grad, [1, 0, 3])

    @pytest.mark.parametrize("seed", range(10))
    def test_gain_minimizes_squared_error(self, seed):
        """Grid-search oracle: the masked mean of |w| minimizes |m*w - a*m*sign(w)|^2."""
        rng = np.random.default_rng(seed)
        w = rng.normal(size=7).astype(np.float32)
        m = (rng.random(7) < 0.7).astype(np.float32)
        m[0] = 1.0
        grid = np.linspace(0, 3, 30001)
        sgn = np.where(w >= 0, 1.0, -1.0)
        err = ((m * w)[None] - grid[:, None] * (m * sgn)[None]) ** 2
        best = grid[np.argmin(err.sum(axis=1))]
        assert binary_gain(w, m) == pytest.approx(best, abs=1e-4)


class TestBinarizeActivations:
    def test_forward(self):
        np.testing.assert_array_equal(binarize_activations(Tensor([-1.0, 0.2, 3.0])).data, [0, 1, 1])

    def test_backward(self):
        x = Tensor([0.0, 1.0, -1.5, 0.5], requires_grad=True)
        backward(binarize_activations(x).sum())
        np.testing.assert_allclose(x.grad, [1.0, 0.0, 0.0, 0.5])
