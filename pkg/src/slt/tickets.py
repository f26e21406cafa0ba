"""Ticket search pipelines: connection tickets, patch tickets and their combination.

* :func:`find_connection_tickets` trains pruning scores over frozen random
  weights and re-projects masks once per epoch.
* :func:`select_patch_tickets` warms a spikeformer up on all patches, then
  ranks patches by the norm of their first-encoder-block representation.
* :func:`run_ecpt` chains the two: a connection search on the conv
  projection (through a temporary linear probe head), patch selection on
  top of the now-fixed sparse projection, then encoder/head training on the
  selected patches.
"""
from dataclasses import asdict, dataclass, field
from fractions import Fraction
import math

import numpy as np

from .errors import ContractError, DegenerateMaskError
from .layers import MaskedLayer, topk_mask
from .models import Recorder, SpikeformerToy
from .ops import cross_entropy, mean, reshape
from .optim import OptimizerState, optimizer_step
from .seeding import rng_for, stream_seed
from .tensor import Tensor, backward, no_grad
from .data import batch_iter

METRIC_FIELDS = ("epoch", "loss", "train_acc", "test_acc", "spike_rate", "synops",
                 "sparsity_conn", "sparsity_patch")


@dataclass
class TrainSettings:
    batch: int = 32
    optimizer: str = "adam"
    score_lr: float = 0.1
    weight_lr: float = 1e-3
    seed: int = 0
    eval_batch: int = 128


@dataclass
class PatchTicket:
    indices: np.ndarray
    scores: np.ndarray
    source_pr_p: float
    n_patches: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        k = self.n_patches - pruned_patch_count(self.source_pr_p, self.n_patches)
        if len(self.indices) != k:
            raise ContractError(f"ticket holds {len(self.indices)} patches, expected {k}")
        if np.any(np.diff(self.indices) <= 0):
            raise ContractError("ticket indices must be strictly increasing")
        if len(self.indices) and (self.indices[0] < 0 or self.indices[-1] >= self.n_patches):
            raise ContractError("ticket index outside [0, n_patches)")

    @property
    def sparsity(self):
        return 1.0 - len(self.indices) / self.n_patches


@dataclass
class TicketReport:
    mode: str
    layer_sparsity: dict = field(default_factory=dict)
    conn_sparsity: float = 0.0
    patch_sparsity: float = 0.0
    accuracy_before: float = 0.0
    accuracy_after: float = 0.0
    spike_rate: float = 0.0
    synops: float = 0.0
    seed: int = 0
    epochs: dict = field(default_factory=dict)
    ticket: list = None
    history: list = field(default_factory=list)

    def to_json(self):
        return {k: v for k, v in asdict(self).items() if k != "history"}


@dataclass
class EvalResult:
    accuracy: float
    spike_rate: float
    synops: float
    loss: float


def pruned_patch_count(pr_p, n_patches):
    return math.ceil(Fraction(repr(float(pr_p))) * n_patches)


def conn_sparsity(layers):
    layers = list(layers.values() if isinstance(layers, dict) else layers)
    total = sum(l.numel for l in layers)
    if not total:
        return 0.0
    return (total - sum(int(np.count_nonzero(l.m)) for l in layers)) / total


def prepare_frames(model, frames):
    """Collapse multi-frame input for non-spiking variants (their T is 1)."""
    if not model.spiking and frames.shape[0] > 1:
        return frames.mean(axis=0, keepdims=True)
    return frames


def _default_forward(model, ticket=None):
    if isinstance(model, SpikeformerToy):
        indices = None if ticket is None else getattr(ticket, "indices", ticket)
        return lambda frames: model.forward(frames, indices)
    return lambda frames: model.forward(prepare_frames(model, frames))


def evaluate(model, dataset, ticket=None, forward=None, batch=128):
    """Accuracy, spike rate and SynOps per sample over a held-out split."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty split")
    forward = forward or _default_forward(model, ticket)
    rec = Recorder()
    model.recorder = rec
    correct, loss_sum = 0, 0.0
    try:
        with no_grad():
            for frames, labels in batch_iter(dataset, batch):
                logits = forward(frames)
                correct += int((logits.data.argmax(axis=1) == labels).sum())
                loss_sum += cross_entropy(logits, labels).item() * len(labels)
    finally:
        model.recorder = None
    n = len(dataset)
    return EvalResult(correct / n, rec.spike_rate, rec.synops / n, loss_sum / n)


def _train_epoch(forward, data, groups, settings, shuffle_seed):
    """One pass of minibatch descent; ``groups`` pairs optimizer states with params."""
    params = [p for _, ps in groups for p in ps]
    if not params:
        raise ContractError("nothing to train")
    loss_sum, correct, n = 0.0, 0, 0
    for frames, labels in batch_iter(data, settings.batch, shuffle_seed):
        logits = forward(frames)
        loss = cross_entropy(logits, labels)
        for p in params:
            p.grad = None
        backward(loss)
        for state, ps in groups:
            optimizer_step(state, ps)
        loss_sum += loss.item() * len(labels)
        correct += int((logits.data.argmax(axis=1) == labels).sum())
        n += len(labels)
    return loss_sum / n, correct / n


class _History:
    """Accumulates per-epoch metric rows across pipeline phases."""

    def __init__(self, rows=None):
        self.rows = rows if rows is not None else []

    @property
    def next_epoch(self):
        return len(self.rows)

    def add(self, loss, train_acc, ev, sp_conn, sp_patch):
        self.rows.append(dict(
            epoch=self.next_epoch, loss=loss, train_acc=train_acc, test_acc=ev.accuracy,
            spike_rate=ev.spike_rate, synops=ev.synops,
            sparsity_conn=sp_conn, sparsity_patch=sp_patch,
        ))


def _baseline_row(history, model, evaluator, train_data, forward, batch, sp_conn=0.0, sp_patch=0.0):
    """Evaluate before training; the first pipeline phase also records it as epoch 0."""
    ev = evaluator()
    if history.next_epoch == 0:
        tr = evaluate(model, train_data, forward=forward, batch=batch)
        history.add(tr.loss, tr.accuracy, ev, sp_conn, sp_patch)
    return ev


def find_connection_tickets(model, dataset, pr_c=0.5, epochs=30, eta=0.1, settings=None,
                            layers=None, trainable=(), forward=None, history=None):
    """Score-only search for a connection ticket inside frozen random weights.

    Every minibatch updates the scores through the straight-through
    gradient; once per epoch each layer keeps its top ``ceil((1-pr_c) n)``
    scores and recomputes its gain. ``trainable`` tensors (such as a probe
    head's weights) are trained alongside with the weight learning rate.
    """
    settings = settings or TrainSettings()
    layers = dict(model.layers() if layers is None else layers)
    if not 0.0 <= pr_c < 1.0:
        raise ContractError(f"pr_c must be in [0, 1), got {pr_c}")
    for name, layer in layers.items():
        if not layer.weight_frozen:
            raise ContractError(f"layer {name} has trainable weights; freeze it before a ticket search")
    for layer in layers.values():
        layer.prune_rate = float(pr_c)
        layer.s.requires_grad = True
        layer.project_topk()
        layer.gain_update()
    hashes = {n: l.weight_hash() for n, l in layers.items()}
    forward = forward or _default_forward(model)
    hist = _History(history)
    test, train = dataset.test, dataset.train

    def evaluator():
        return evaluate(model, test, forward=forward, batch=settings.eval_batch)

    before = _baseline_row(hist, model, evaluator, train, forward, settings.eval_batch,
                           conn_sparsity(layers))
    scores = [l.s for l in layers.values()]
    groups = [(OptimizerState(settings.optimizer, eta), scores)]
    if trainable:
        groups.append((OptimizerState("adam", settings.weight_lr), list(trainable)))
    ev = before
    for epoch in range(epochs):
        loss, acc = _train_epoch(forward, train, groups, settings,
                                 stream_seed(settings.seed, "shuffle", hist.next_epoch))
        for layer in layers.values():
            layer.project_topk()
            layer.gain_update()
        ev = evaluator()
        hist.add(loss, acc, ev, conn_sparsity(layers), 0.0)
    for name, layer in layers.items():
        if layer.weight_hash() != hashes[name]:
            raise ContractError(f"weights of {name} changed during the ticket search")
        layer.s.grad = None
    return TicketReport(
        mode="conn",
        layer_sparsity={n: l.sparsity() for n, l in layers.items()},
        conn_sparsity=conn_sparsity(layers),
        accuracy_before=before.accuracy, accuracy_after=ev.accuracy,
        spike_rate=ev.spike_rate, synops=ev.synops, seed=settings.seed,
        epochs={"conn": epochs}, history=hist.rows,
    )


def attach_probe_head(cpm_model, num_classes, rng=None):
    """Add a temporary flatten + linear classifier over the conv projection output."""
    if getattr(cpm_model, "probe_head", None) is not None:
        raise ContractError("a probe head is already attached")
    rng = rng if rng is not None else np.random.default_rng(0)
    fan_in = cpm_model.n_patches * cpm_model.dim
    cpm_model.probe_head = MaskedLayer((int(num_classes), fan_in), "linear", 0.0,
                                       "full_precision", weight_frozen=False, rng=rng)
    return cpm_model.probe_head


def detach_probe_head(cpm_model):
    """Drop the probe head; the projection's masks and gains are kept."""
    if getattr(cpm_model, "probe_head", None) is None:
        raise ContractError("no probe head attached")
    cpm_model.probe_head = None


def probe_forward(cpm_model, frames):
    head = getattr(cpm_model, "probe_head", None)
    if head is None:
        raise ContractError("probe_forward needs an attached probe head")
    tokens = cpm_model.embed(frames)
    T, B = tokens.shape[:2]
    logits = head(reshape(tokens, (T * B, -1)))
    return mean(reshape(logits, (T, B, -1)), axis=0)


class _TokenCache:
    """Patch embeddings of a split computed once through a fixed projection."""

    def __init__(self, model, dataset, batch):
        chunks = []
        with no_grad():
            for frames, _ in batch_iter(dataset, batch):
                chunks.append(model.embed(frames).data.swapaxes(0, 1))
        self.frames = np.concatenate(chunks, axis=0)
        self.labels = dataset.labels

    def __len__(self):
        return len(self.labels)


def patch_saliency(model, data, batch=128, cached=False):
    """Mean L2 norm per patch of the first encoder block output (all patches)."""
    total = np.zeros(model.n_patches, dtype=np.float64)
    count = 0
    with no_grad():
        for frames, _ in batch_iter(data, batch):
            tokens = Tensor(frames) if cached else model.embed(frames)
            _, first = model.encode(tokens, return_first=True)
            norms = np.sqrt((first.data.astype(np.float64) ** 2).sum(axis=-1))
            total += norms.sum(axis=(0, 1))
            count += norms.shape[0] * norms.shape[1]
    return total / count


def ticket_from_saliency(saliency, pr_p):
    n = len(saliency)
    k = n - pruned_patch_count(pr_p, n)
    if k <= 0:
        raise DegenerateMaskError(f"pr_p={pr_p} leaves no patches out of {n}")
    keep = np.flatnonzero(topk_mask(saliency, k))
    return PatchTicket(keep, saliency, float(pr_p), n)


def _encoder_forward(model, indices, cached):
    if cached:
        return lambda tokens: model.encode(Tensor(tokens), indices)
    return lambda frames: model.forward(frames, indices)


def select_patch_tickets(model, dataset, pr_p=0.3, epochs=10, settings=None, cache=None,
                         history=None, sp_conn=0.0):
    """Warm up on all patches for ``epochs``, then keep the most salient patches."""
    settings = settings or TrainSettings()
    if not 0.0 <= pr_p < 1.0:
        raise ContractError(f"pr_p must be in [0, 1), got {pr_p}")
    if model.n_patches - pruned_patch_count(pr_p, model.n_patches) <= 0:
        raise DegenerateMaskError(f"pr_p={pr_p} leaves no patches")
    hist = _History(history)
    _train_phase(model, dataset, epochs, settings, None, cache, hist, sp_conn)
    data = cache if cache is not None else dataset.train
    saliency = patch_saliency(model, data, settings.eval_batch, cached=cache is not None)
    return ticket_from_saliency(saliency, pr_p)


def _train_phase(model, dataset, epochs, settings, ticket, cache, hist, sp_conn):
    indices = None if ticket is None else ticket.indices
    sp_patch = 0.0 if ticket is None else ticket.sparsity
    forward = _encoder_forward(model, indices, cache is not None) if isinstance(model, SpikeformerToy) \
        else _default_forward(model)
    data = cache if cache is not None else dataset.train
    test = dataset.test

    def evaluator():
        return evaluate(model, test, ticket=indices, batch=settings.eval_batch)

    ev = _baseline_row(hist, model, evaluator, data, forward, settings.eval_batch, sp_conn, sp_patch)
    params = model.parameters()
    state = OptimizerState(settings.optimizer, settings.weight_lr)
    for _ in range(epochs):
        loss, acc = _train_epoch(forward, data, [(state, params)], settings,
                                 stream_seed(settings.seed, "shuffle", hist.next_epoch))
        ev = evaluator()
        hist.add(loss, acc, ev, sp_conn, sp_patch)
    return ev


def train_weights(model, dataset, epochs, settings=None, ticket=None, history=None):
    """Plain weight training (no ticket search); returns a report in ``none`` mode."""
    settings = settings or TrainSettings()
    hist = _History(history)
    ev = _train_phase(model, dataset, epochs, settings, ticket, None, hist, 0.0)
    first = hist.rows[0]["test_acc"] if hist.rows else ev.accuracy
    return TicketReport(
        mode="none", accuracy_before=first, accuracy_after=ev.accuracy,
        spike_rate=ev.spike_rate, synops=ev.synops, seed=settings.seed,
        epochs={"train": epochs}, history=hist.rows,
        patch_sparsity=0.0 if ticket is None else ticket.sparsity,
    )


def run_patch(model, dataset, pr_p=0.3, n_sp=10, n_train=10, settings=None):
    """Patch tickets alone: warm-up, selection, then training on the ticket."""
    settings = settings or TrainSettings()
    hist = _History()
    ticket = select_patch_tickets(model, dataset, pr_p, n_sp, settings, history=hist.rows)
    ev = _train_phase(model, dataset, n_train, settings, ticket, None, hist, 0.0)
    return TicketReport(
        mode="patch", patch_sparsity=ticket.sparsity,
        accuracy_before=hist.rows[0]["test_acc"], accuracy_after=ev.accuracy,
        spike_rate=ev.spike_rate, synops=ev.synops, seed=settings.seed,
        epochs={"sp": n_sp, "train": n_train}, ticket=ticket.indices.tolist(), history=hist.rows,
    )


def cpm_snapshot(model):
    return {n: (l.weight_hash(), l.m.tobytes(), l.alpha) for n, l in model.cpm_layers().items()}


def run_ecpt(model, dataset, pr_c=0.5, pr_p=0.3, n_c=30, n_sp=10, n_train=10, settings=None):
    """Connection tickets in the conv projection, then patch tickets on top."""
    settings = settings or TrainSettings()
    if not isinstance(model, SpikeformerToy):
        raise ContractError("run_ecpt needs a SpikeformerToy")
    cpm = model.cpm_layers()
    hist = _History()
    # phase 1: score search on the projection through a temporary probe head
    head = attach_probe_head(model, dataset.classes, rng_for(settings.seed, "probe"))
    conn = find_connection_tickets(model, dataset, pr_c, n_c, settings.score_lr, settings,
                                   layers=cpm, trainable=[head.w],
                                   forward=lambda f: probe_forward(model, f), history=hist.rows)
    detach_probe_head(model)
    for layer in cpm.values():
        layer.freeze_scores()
    snap = cpm_snapshot(model)
    sp_conn = conn.conn_sparsity
    # phase 2: patch selection over the fixed sparse projection
    cache = _TokenCache(model, dataset.train, settings.eval_batch)
    ticket = select_patch_tickets(model, dataset, pr_p, n_sp, settings, cache=cache,
                                  history=hist.rows, sp_conn=sp_conn)
    # phase 3: encoder and head train on the ticket patches only
    ev = _train_phase(model, dataset, n_train, settings, ticket, cache, hist, sp_conn)
    if cpm_snapshot(model) != snap:
        raise ContractError("conv projection changed after the connection phase")
    return TicketReport(
        mode="ecpt", layer_sparsity=conn.layer_sparsity, conn_sparsity=sp_conn,
        patch_sparsity=ticket.sparsity, accuracy_before=hist.rows[0]["test_acc"],
        accuracy_after=ev.accuracy, spike_rate=ev.spike_rate, synops=ev.synops,
        seed=settings.seed, epochs={"conn": n_c, "sp": n_sp, "train": n_train},
        ticket=ticket.indices.tolist(), history=hist.rows,
    )
