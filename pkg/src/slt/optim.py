"""SGD and bias-corrected Adam over lists of leaf tensors."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer kind {self.kind!r}")


def optimizer_step(state, params):
    """Update ``params`` in place from their ``.grad`` and advance the counter."""
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p!r} has no gradient")
    state.step += 1
    lr = np.float32(state.lr)
    if state.kind == "sgd":
        for p in params:
            p.data -= lr * p.grad
        return
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ContractError("parameter list changed size between Adam steps")
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.data.shape:
            raise ContractError("Adam moment shape does not match its parameter")
        g = p.grad
        m *= np.float32(b1)
        m += np.float32(1.0 - b1) * g
        v *= np.float32(b2)
        v += np.float32(1.0 - b2) * (g * g)
        m_hat = m / np.float32(c1)
        v_hat = v / np.float32(c2)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + np.float32(state.eps))


def zero_grad(params):
    for p in params:
        p.grad = None
