"""Toy spiking architectures built from :class:`MaskedLayer`.

All models take frames shaped ``[T, B, C, H, W]`` (or ``[T, B, F]`` for the
MLP) and return logits ``[B, classes]`` averaged over timesteps. A
single-frame input (``T == 1``) fed to a multi-step model is treated as a
constant current repeated every step.

Internally activations are kept time-major and flattened to ``[T*B, ...]``
so each layer runs once over all timesteps; LIF layers then scan the time
axis in one fused kernel call.
"""
from collections import OrderedDict
import math

import numpy as np

from .errors import ContractError, DimensionError, TicketIndexError
from .layers import MaskedLayer
from .ops import avg_pool2d, index_select, matmul, mean, relu, repeat_time, reshape, transpose
from .snn import LifParams, binarize_activations, lif_run
from .tensor import Tensor, as_tensor

# Without normalization layers, Kaiming-scale weights leave deeper LIF layers
# silent; this gain keeps firing rates roughly 0.1-0.2 through depth.
SPIKING_INIT_GAIN = 4.0

VARIANTS = {
    # name: (spiking, binary weights, binary activations)
    "ann": (False, False, False),
    "bnn": (False, True, False),
    "bin_act_bnn": (False, True, True),
    "snn": (True, False, False),
    "bin_w_snn": (True, True, False),
}


class Recorder:
    """Collects activation counts and SynOps during an evaluation pass."""

    def __init__(self):
        self.fired = 0.0
        self.slots = 0
        self.synops = 0
        self.per_layer = OrderedDict()

    def activations(self, t):
        d = t.data
        self.fired += float(np.count_nonzero(d))
        self.slots += d.size

    def layer_input(self, name, layer, x):
        d = x.data
        if not np.isin(d, (0.0, 1.0)).all():
            return
        n = layer.synops_count(d)
        self.synops += n
        self.per_layer[name] = self.per_layer.get(name, 0) + n

    @property
    def spike_rate(self):
        return self.fired / self.slots if self.slots else 0.0


class Model:
    """Shared bookkeeping: named layers, extra tensors and the time axis."""

    arch = None

    def __init__(self, T, lif, variant, init_gain=None):
        if variant not in VARIANTS:
            raise ContractError(f"unknown variant {variant!r}")
        self.variant = variant
        self.spiking, self.binary_weights, self.binary_acts = VARIANTS[variant]
        if init_gain is None:
            init_gain = SPIKING_INIT_GAIN if self.spiking else 1.0
        self.init_gain = float(init_gain)
        self.T = int(T) if self.spiking else 1
        if self.T < 1:
            raise ContractError("T must be >= 1")
        self.lif = lif or LifParams()
        self.recorder = None
        self._layers = OrderedDict()
        self._tensors = OrderedDict()

    def _add(self, name, layer):
        self._layers[name] = layer
        return layer

    def layers(self):
        return self._layers

    def tensors(self):
        return self._tensors

    def parameters(self):
        params = [p for layer in self._layers.values() for p in layer.parameters()]
        params += [t for t in self._tensors.values() if t.requires_grad]
        return params

    def _mode(self):
        return "binary_weight" if self.binary_weights else "full_precision"

    def _apply(self, name, x):
        layer = self._layers[name]
        if self.recorder is not None:
            self.recorder.layer_input(name, layer, x)
        return layer(x)

    def _act(self, x, T=None):
        """Activation over a time-major ``[T*B, ...]`` tensor."""
        T = self.T if T is None else T
        if self.spiking:
            shape = x.shape
            out = reshape(lif_run(reshape(x, (T, -1)), self.lif), shape)
        elif self.binary_acts:
            out = binarize_activations(x)
        else:
            out = relu(x)
        if self.recorder is not None:
            self.recorder.activations(out)
        return out

    def _first(self, name, frames):
        """Apply the first layer, replicating a static frame across time."""
        x = as_tensor(frames)
        Tin = x.shape[0]
        if Tin not in (1, self.T):
            raise DimensionError(f"input has {Tin} timesteps, model expects {self.T}")
        B = x.shape[1]
        h = self._apply(name, reshape(x, (Tin * B,) + x.shape[2:]))
        if Tin == 1 and self.T > 1:
            h = reshape(repeat_time(h, self.T), (self.T * B,) + h.shape[1:])
        return h, B

    def _time_mean(self, logits, B):
        return mean(reshape(logits, (self.T, B, -1)), axis=0)

    def __call__(self, frames, *args, **kwargs):
        return self.forward(frames, *args, **kwargs)


class SpikingMLP(Model):
    arch = "mlp"

    def __init__(self, in_features, classes, hidden=(128,), T=4, lif=None, variant="snn",
                 prune_rate=0.0, weight_frozen=True, rng=None, init_gain=None):
        super().__init__(T, lif, variant, init_gain)
        rng = np.random.default_rng(0) if rng is None else rng
        dims = [int(in_features)] + [int(h) for h in hidden] + [int(classes)]
        for i in range(len(dims) - 1):
            self._add(f"fc{i}", MaskedLayer((dims[i + 1], dims[i]), "linear", prune_rate,
                                            self._mode(), weight_frozen, rng,
                                            init_gain=self.init_gain))
        self.spec = dict(in_features=int(in_features), classes=int(classes),
                         hidden=[int(h) for h in hidden])

    def forward(self, frames):
        x = as_tensor(frames)
        x = reshape(x, x.shape[:2] + (-1,))
        names = list(self._layers)
        h, B = self._first(names[0], x)
        for name in names[1:]:
            h = self._apply(name, self._act(h))
        return self._time_mean(h, B)


class SpikingConvNet(Model):
    """VGG-style stack: ``conv -> [2x2 avg-pool] -> activation`` blocks then linear layers."""

    arch = "convnet"

    def __init__(self, in_channels, hw, classes, channels=(16, 32, 64, 64),
                 pool=None, hidden=(128,), T=4, lif=None, variant="snn",
                 prune_rate=0.0, weight_frozen=True, rng=None, init_gain=None):
        super().__init__(T, lif, variant, init_gain)
        rng = np.random.default_rng(0) if rng is None else rng
        channels = [int(c) for c in channels]
        if pool is None:
            pool = [i < len(channels) - 1 for i in range(len(channels))]
        pool = [bool(p) for p in pool]
        if len(pool) != len(channels):
            raise ContractError("pool flags must match the number of conv blocks")
        size = int(hw)
        c_in = int(in_channels)
        for i, c in enumerate(channels):
            self._add(f"conv{i}", MaskedLayer((c, c_in, 3, 3), "conv", prune_rate, self._mode(),
                                              weight_frozen, rng, stride=1, padding=1,
                                              init_gain=self.init_gain))
            if pool[i]:
                if size % 2:
                    raise DimensionError(f"feature map {size} cannot be pooled")
                size //= 2
            c_in = c
        dims = [c_in * size * size] + [int(h) for h in hidden] + [int(classes)]
        for i in range(len(dims) - 1):
            self._add(f"fc{i}", MaskedLayer((dims[i + 1], dims[i]), "linear", prune_rate,
                                            self._mode(), weight_frozen, rng,
                                            init_gain=self.init_gain))
        self.pool = pool
        self.spec = dict(in_channels=int(in_channels), hw=int(hw), classes=int(classes),
                         channels=channels, pool=pool, hidden=[int(h) for h in hidden])

    def forward(self, frames):
        convs = [n for n in self._layers if n.startswith("conv")]
        fcs = [n for n in self._layers if n.startswith("fc")]
        h, B = self._first(convs[0], frames)
        for i, name in enumerate(convs):
            if i:
                h = self._apply(name, h)
            if self.pool[i]:
                h = avg_pool2d(h, 2)
            h = self._act(h)
        h = reshape(h, (h.shape[0], -1))
        for name in fcs:
            if name != fcs[0]:
                h = self._act(h)
            h = self._apply(name, h)
        return self._time_mean(h, B)


def spiking_attention(q, k, v, lif, T=None):
    """Spike-form self-attention ``LIF(q k^T v * scale)`` without softmax.

    ``q, k, v`` are binary ``[T, B, heads, n, d_h]`` tensors (the leading
    axes may be any batch shape as long as axis 0 is time) and
    ``scale = 1 / sqrt(d_h * n)``.
    """
    for name, t in (("q", q), ("k", k), ("v", v)):
        if not np.isin(t.data, (0.0, 1.0)).all():
            raise ContractError(f"spiking_attention: {name} is not a binary spike tensor")
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    n, dh = q.shape[-2], q.shape[-1]
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = matmul(q, kt)
    pre = matmul(scores, v) * (1.0 / math.sqrt(dh * n))
    return lif_run(pre, lif)


class SpikeformerToy(Model):
    """Conv-projection patch embedding, spiking encoder blocks and a linear head.

    The residual stream carries membrane currents; every block reads it
    through a LIF layer so the tensors feeding linear layers stay binary.
    """

    arch = "spikeformer"

    def __init__(self, in_channels, hw, classes, patch=8, dim=64, heads=2, depth=2,
                 mlp_ratio=2, T=4, lif=None, prune_rate=0.0, cpm_frozen=False,
                 encoder_frozen=False, rng=None, init_gain=None):
        super().__init__(T, lif, "snn", init_gain)
        g = self.init_gain
        rng = np.random.default_rng(0) if rng is None else rng
        hw, patch, dim = int(hw), int(patch), int(dim)
        stages = int(round(math.log2(patch)))
        if patch < 2 or 2 ** stages != patch:
            raise ContractError(f"patch size must be a power of two >= 2, got {patch}")
        if hw % patch:
            raise DimensionError(f"input {hw}x{hw} is not divisible by patch {patch}")
        if dim % heads:
            raise ContractError("dim must be divisible by heads")
        self.patch, self.dim, self.heads, self.depth = patch, dim, int(heads), int(depth)
        self.grid = hw // patch
        self.n_patches = self.grid * self.grid
        c_in = int(in_channels)
        for i in range(stages):
            c = max(1, dim // 2 ** (stages - 1 - i))
            self._add(f"cpm{i}", MaskedLayer((c, c_in, 3, 3), "conv", prune_rate, "full_precision",
                                             cpm_frozen, rng, stride=1, padding=1, init_gain=g))
            c_in = c
        self._tensors["pos_embed"] = Tensor(
            rng.normal(0.0, 0.02, size=(self.n_patches, dim)).astype(np.float32),
            requires_grad=True,
        )
        hidden = int(mlp_ratio * dim)
        for b in range(self.depth):
            for part in ("q", "k", "v", "o"):
                self._add(f"enc{b}.{part}", MaskedLayer((dim, dim), "linear", 0.0, "full_precision",
                                                        encoder_frozen, rng, init_gain=g))
            self._add(f"enc{b}.fc1", MaskedLayer((hidden, dim), "linear", 0.0, "full_precision",
                                                 encoder_frozen, rng, init_gain=g))
            self._add(f"enc{b}.fc2", MaskedLayer((dim, hidden), "linear", 0.0, "full_precision",
                                                 encoder_frozen, rng, init_gain=g))
        self._add("head", MaskedLayer((int(classes), dim), "linear", 0.0, "full_precision",
                                      encoder_frozen, rng, init_gain=g))
        self.spec = dict(in_channels=int(in_channels), hw=hw, classes=int(classes), patch=patch,
                         dim=dim, heads=self.heads, depth=self.depth, mlp_ratio=mlp_ratio)

    def cpm_layers(self):
        return OrderedDict((n, l) for n, l in self._layers.items() if n.startswith("cpm"))

    def encoder_layers(self):
        return OrderedDict((n, l) for n, l in self._layers.items() if not n.startswith("cpm"))

    def embed(self, frames):
        """Spiking patch embedding: ``[T, B, C, H, W] -> [T, B, n_p, d]`` binary."""
        x = as_tensor(frames)
        if x.ndim != 5:
            raise DimensionError(f"expected [T, B, C, H, W] frames, got {x.shape}")
        if x.shape[3] % self.patch or x.shape[4] % self.patch:
            raise DimensionError(f"frame {x.shape[3]}x{x.shape[4]} not divisible by patch {self.patch}")
        names = list(self.cpm_layers())
        h, B = self._first(names[0], x)
        for i, name in enumerate(names):
            if i:
                h = self._apply(name, h)
            h = self._act(avg_pool2d(h, 2))
        gh, gw = h.shape[2], h.shape[3]
        tokens = transpose(reshape(h, (self.T, B, self.dim, gh * gw)), (0, 1, 3, 2))
        return tokens

    def _block(self, b, h):
        T, B, n, d = h.shape
        H, dh = self.heads, d // self.heads
        s = self._act(reshape(h, (T * B * n, d)))
        qkv = []
        for part in ("q", "k", "v"):
            z = self._act(self._apply(f"enc{b}.{part}", s))
            qkv.append(transpose(reshape(z, (T, B, n, H, dh)), (0, 1, 3, 2, 4)))
        a = spiking_attention(*qkv, self.lif)
        if self.recorder is not None:
            self.recorder.activations(a)
        a = reshape(transpose(a, (0, 1, 3, 2, 4)), (T * B * n, d))
        h = h + reshape(self._apply(f"enc{b}.o", a), (T, B, n, d))
        s2 = self._act(reshape(h, (T * B * n, d)))
        m = self._act(self._apply(f"enc{b}.fc1", s2))
        return h + reshape(self._apply(f"enc{b}.fc2", m), (T, B, n, d))

    def encode(self, tokens, indices=None, return_first=False):
        """Run encoders and head on (optionally gathered) patch tokens."""
        pos = self._tensors["pos_embed"]
        if indices is not None:
            idx = np.asarray(indices, dtype=np.int64)
            if idx.ndim != 1 or idx.size == 0:
                raise ContractError("patch ticket must be a non-empty 1-D index set")
            if idx.min() < 0 or idx.max() >= self.n_patches:
                raise TicketIndexError(f"ticket index out of range [0, {self.n_patches})")
            if np.unique(idx).size != idx.size:
                raise ContractError("patch ticket indices must be unique")
            tokens = index_select(tokens, idx, axis=2)
            pos = index_select(pos, idx, axis=0)
        h = tokens + pos
        first = None
        for b in range(self.depth):
            h = self._block(b, h)
            if b == 0:
                first = h
        T, B, n, d = h.shape
        s = self._act(reshape(h, (T * B * n, d)))
        pooled = mean(reshape(s, (T * B, n, d)), axis=1)
        logits = self._time_mean(self._apply("head", pooled), B)
        return (logits, first) if return_first else logits

    def forward(self, frames, ticket=None):
        indices = getattr(ticket, "indices", ticket)
        return self.encode(self.embed(frames), indices)


def sps_embed(model, frames):
    return model.embed(frames)


def spikeformer_forward(model, frames, patch_ticket=None):
    return model.forward(frames, patch_ticket)


def convnet_forward(net, frames):
    return net.forward(frames)
