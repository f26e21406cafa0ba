"""Maskable linear and conv layers for score-based connection tickets.

A layer holds frozen random weights ``w``, real-valued scores ``s``, a
binary mask ``m`` and a scalar gain ``alpha``. The forward pass uses

    full_precision:  alpha * (m * w)
    binary_weight:   alpha * (m * sign(w))

During a ticket search the mask is treated as a straight-through function
of the scores, so every score (pruned or not) receives
``dL/dw_eff * alpha * w`` (or ``alpha * sign(w)``).
"""
from fractions import Fraction
import hashlib
import math

import numpy as np

from . import kernels
from .errors import ContractError, DegenerateMaskError, DimensionError
from .ops import conv2d, custom_grad, linear
from .snn import binarize_weights, sign
from .tensor import Tensor

MODES = ("full_precision", "binary_weight")


def kept_count(prune_rate, n):
    """Number of surviving entries, ``ceil((1 - prune_rate) * n)``, computed exactly."""
    keep = (1 - Fraction(repr(float(prune_rate)))) * n
    return math.ceil(keep)


def topk_mask(scores, k):
    """Indicator of the ``k`` largest entries; ties go to the lower flat index."""
    flat = np.asarray(scores).reshape(-1)
    if k <= 0:
        raise DegenerateMaskError("top-k projection would keep no entries")
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(flat.size, dtype=np.float32)
    mask[order[:k]] = 1.0
    return mask.reshape(np.shape(scores))


class MaskedLayer:
    """Linear (``[out, in]``) or conv (``[O, C, kh, kw]``) weight with a pruning mask.

    ``weight_frozen=True`` layers are searched over (scores train, weights
    never change). Otherwise the weights train normally, ``alpha`` stays 1
    and the mask stays all-ones unless set explicitly. ``init_gain`` scales
    the Kaiming-uniform bound of the weights.
    """

    def __init__(self, shape, kind="linear", prune_rate=0.0, mode="full_precision",
                 weight_frozen=True, rng=None, stride=1, padding=0, init_gain=1.0):
        if kind not in ("linear", "conv"):
            raise ContractError(f"unknown layer kind {kind!r}")
        if mode not in MODES:
            raise ContractError(f"unknown layer mode {mode!r}")
        shape = tuple(int(d) for d in shape)
        if len(shape) != (2 if kind == "linear" else 4):
            raise DimensionError(f"{kind} layer shape {shape} has the wrong rank")
        if not 0.0 <= prune_rate < 1.0:
            raise ContractError(f"prune_rate must be in [0, 1), got {prune_rate}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.kind = kind
        self.mode = mode
        self.stride = stride
        self.padding = padding
        self.prune_rate = float(prune_rate)
        self.weight_frozen = bool(weight_frozen)

        fan_in = int(np.prod(shape[1:]))
        bound = init_gain * math.sqrt(6.0 / fan_in)
        if self.weight_frozen and mode == "full_precision":
            # alpha ~ bound/2 multiplies w, so widen w until alpha*w has the target variance
            bound = math.sqrt(2.0 * bound)
        self.w = Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32))
        self.s = Tensor(
            (rng.uniform(0.0, 1.0, size=shape) / math.sqrt(fan_in)).astype(np.float32),
            requires_grad=self.weight_frozen,
        )
        self.w.requires_grad = not self.weight_frozen
        self.m = np.ones(shape, dtype=np.float32)
        self.alpha = 1.0
        if self.weight_frozen:
            self.project_topk()
            self.gain_update()

    @property
    def shape(self):
        return self.w.shape

    @property
    def numel(self):
        return self.w.size

    @property
    def searching(self):
        return self.weight_frozen and self.s.requires_grad

    def freeze_scores(self):
        """End the search: the mask and gain become constants."""
        self.s.requires_grad = False
        self.s.grad = None

    def parameters(self):
        if self.searching:
            return [self.s]
        if not self.weight_frozen:
            return [self.w]
        return []

    def _direction(self):
        w = self.w.data
        return sign(w) if self.mode == "binary_weight" else w

    def effective_weight(self):
        alpha = np.float32(self.alpha)
        m = self.m
        if not self.weight_frozen:
            if self.mode == "binary_weight":
                return binarize_weights(self.w, m)
            return custom_grad(lambda w: alpha * (m * w), lambda g, w: g * (alpha * m),
                               [self.w], op="masked_weight")
        direction = self._direction()
        value = alpha * (m * direction)
        # straight-through: d w_eff / d s := alpha * direction for every entry
        return custom_grad(lambda s: value, lambda g, s: g * (alpha * direction),
                           [self.s], op="scored_weight")

    def __call__(self, x):
        weight = self.effective_weight()
        if self.kind == "linear":
            return linear(x, weight)
        return conv2d(x, weight, stride=self.stride, padding=self.padding)

    def score_grad_update(self, grad_eff, eta):
        """Plain gradient step on the scores given dL/d(effective weight)."""
        grad_eff = np.asarray(grad_eff, dtype=np.float32)
        if grad_eff.shape != self.shape:
            raise DimensionError(f"score gradient {grad_eff.shape} vs layer {self.shape}")
        self.s.data -= np.float32(eta) * (grad_eff * (np.float32(self.alpha) * self._direction()))

    def project_topk(self):
        k = kept_count(self.prune_rate, self.numel)
        self.m = topk_mask(self.s.data, k)

    def gain_update(self):
        total = float(self.m.sum(dtype=np.float64))
        if total == 0:
            raise DegenerateMaskError("gain update on an all-zero mask")
        self.alpha = float(np.abs(self.m * self.w.data).sum(dtype=np.float64) / total)

    def sparsity(self):
        """Pruned fraction, correctly rounded from the exact ratio of counts."""
        return (self.numel - int(np.count_nonzero(self.m))) / self.numel

    def weight_hash(self):
        return hashlib.sha256(self.w.data.tobytes()).hexdigest()

    def synops_count(self, input_spikes):
        """Accumulate operations triggered by a binary input through the active mask."""
        x = np.asarray(input_spikes.data if isinstance(input_spikes, Tensor) else input_spikes)
        if not np.isin(x, (0.0, 1.0)).all():
            raise ContractError("synops_count needs a binary spike tensor")
        if self.kind == "linear":
            if x.shape[-1] != self.shape[1]:
                raise DimensionError(f"input width {x.shape[-1]} vs fan-in {self.shape[1]}")
            return kernels.synops_dense(x.reshape(-1, x.shape[-1]).astype(np.float32), self.m)
        if x.ndim != 4 or x.shape[1] != self.shape[1]:
            raise DimensionError(f"conv input {x.shape} vs kernel {self.shape}")
        return kernels.synops_conv(x.astype(np.float32), self.m, self.stride, self.padding)


def score_grad_update(layer, grad_eff, eta):
    layer.score_grad_update(grad_eff, eta)


def project_topk(layer):
    layer.project_topk()


def gain_update(layer):
    layer.gain_update()


def effective_weight(layer):
    return layer.effective_weight()


def synops_count(layer, input_spikes):
    return layer.synops_count(input_spikes)
