"""Leaky integrate-and-fire dynamics and binarization primitives.

Per step, with decay ``lam`` and input gain ``g``::

    U[n] = lam * V[n-1] + g * I[n]
    S[n] = heaviside(U[n] - v_th)
    V[n] = U[n] * (1 - S[n]) + v_reset * S[n]

``g`` is 1 in ``unit`` mode and ``1 - lam`` in ``coupled`` mode. The
Heaviside step is exact in the forward pass; the backward pass uses a
triangle surrogate of half-width ``surrogate_width`` centred on ``v_th``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateMaskError, DimensionError
from .ops import custom_grad, mul
from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class LifParams:
    lambda_decay: float = 0.99
    v_th: float = 1.0
    v_reset: float = 0.0
    surrogate_width: float = 1.0
    input_gain_mode: str = "unit"

    def __post_init__(self):
        if not 0.0 < self.lambda_decay <= 1.0:
            raise ContractError(f"lambda_decay must be in (0, 1], got {self.lambda_decay}")
        if not self.v_reset < self.v_th:
            raise ContractError("v_reset must be below v_th")
        if not self.surrogate_width > 0:
            raise ContractError("surrogate_width must be positive")
        if self.input_gain_mode not in ("unit", "coupled"):
            raise ContractError(f"unknown input_gain_mode {self.input_gain_mode!r}")

    @property
    def gain(self):
        return 1.0 if self.input_gain_mode == "unit" else 1.0 - self.lambda_decay


@dataclass
class LifState:
    """Post-reset membrane potential ``v`` after ``step`` updates.

    ``u`` holds the pre-reset potential of the most recent step.
    """
    v: Tensor
    step: int = 0
    u: Tensor = None

    @classmethod
    def reset(cls, shape, p):
        return cls(Tensor(np.full(shape, p.v_reset, dtype=np.float32)))


def surrogate_grad(u, p):
    """Triangle pseudo-derivative of the spike function at potential ``u``."""
    u = np.asarray(u.data if isinstance(u, Tensor) else u, dtype=np.float32)
    return np.maximum(np.float32(0.0), 1.0 - np.abs(u - np.float32(p.v_th)) / np.float32(p.surrogate_width))


def spike_fn(u, p):
    """Heaviside at ``v_th`` with the triangle surrogate as its gradient."""
    th = np.float32(p.v_th)
    return custom_grad(
        lambda x: (x >= th).astype(np.float32),
        lambda g, x: g * surrogate_grad(x, p),
        [u],
        op="spike",
    )


def lif_step(state, input_current, p):
    """One LIF update; returns ``(spikes, new_state)``."""
    current = as_tensor(input_current)
    if current.shape != state.v.shape:
        raise DimensionError(f"lif_step: input {current.shape} vs state {state.v.shape}")
    u = mul(state.v, p.lambda_decay) + mul(current, p.gain)
    s = spike_fn(u, p)
    v = u - mul(u, s) + mul(s, p.v_reset)
    return s, LifState(v=v, step=state.step + 1, u=u)


@dataclass
class LifTrace:
    u: np.ndarray
    v_final: np.ndarray


def lif_run(inputs, p, return_trace=False):
    """Run LIF over axis 0 of a [T, ...] current tensor starting from reset.

    The whole time loop is a single tape node backed by the compiled
    forward/BPTT kernels, equivalent to folding :func:`lif_step`.
    """
    inputs = as_tensor(inputs)
    if inputs.ndim < 1 or inputs.shape[0] < 1:
        raise ContractError("lif_run needs at least one timestep")
    T = inputs.shape[0]
    shape = inputs.shape
    flat = inputs.data.reshape(T, -1)
    u, s, v = kernels.lif_forward(flat, p.lambda_decay, p.gain, p.v_th, p.v_reset)

    def backward(g):
        gi = kernels.lif_backward(
            np.ascontiguousarray(g.reshape(T, -1)), u, s,
            p.lambda_decay, p.gain, p.v_th, p.v_reset, p.surrogate_width,
        )
        return (gi.reshape(shape),)

    out = Tensor._node(s.reshape(shape), (inputs,), backward, "lif_run")
    if return_trace:
        return out, LifTrace(u=u.reshape(shape), v_final=v.reshape(shape[1:]))
    return out


def sign(w):
    """Elementwise sign with sign(0) = +1."""
    return np.where(w >= 0, np.float32(1.0), np.float32(-1.0))


def binary_gain(w, mask):
    """L1 gain ``|mask * w|_1 / |mask|_1`` of a masked weight array."""
    total = float(np.sum(mask, dtype=np.float64))
    if total == 0:
        raise DegenerateMaskError("mask has no active entries")
    return float(np.sum(np.abs(w * mask), dtype=np.float64) / total)


def binarize_weights(w, mask):
    """``alpha * sign(w) * mask`` with a mask-restricted straight-through gradient."""
    w = as_tensor(w)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float32)
    if mask.shape != w.shape:
        raise DimensionError(f"binarize_weights: mask {mask.shape} vs weights {w.shape}")
    alpha = np.float32(binary_gain(w.data, mask))
    return custom_grad(
        lambda x: alpha * sign(x) * mask,
        lambda g, x: g * mask,
        [w],
        op="binarize_weights",
    )


def binarize_activations(x):
    """Heaviside at 0 with a unit-width triangle straight-through gradient."""
    return custom_grad(
        lambda a: (a >= 0).astype(np.float32),
        lambda g, a: g * np.maximum(np.float32(0.0), 1.0 - np.abs(a)),
        [x],
        op="binarize_activations",
    )


def spike_rate(spikes):
    """Fraction of (neuron, timestep) slots that fired."""
    d = spikes.data if isinstance(spikes, Tensor) else spikes
    return float(d.mean()) if d.size else 0.0

