"""Synthetic datasets, event binning, IDX ingestion and the SLTK tensor container."""
from dataclasses import dataclass, field
import math
import struct

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, FormatError


@dataclass(frozen=True)
class Dataset:
    """Immutable ``frames [N, T, C, H, W]`` with integer labels and split tags.

    ``split`` holds one tag per sample (``"train"`` or ``"test"``).
    """
    frames: np.ndarray
    labels: np.ndarray
    classes: int
    split: np.ndarray
    seed: int = 0
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.ndim != 5:
            raise ContractError(f"frames must be [N, T, C, H, W], got {self.frames.shape}")
        if len(self.labels) != len(self.frames) or len(self.split) != len(self.frames):
            raise ContractError("frames, labels and split tags differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ContractError("label outside [0, classes)")
        for arr in (self.frames, self.labels, self.split):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    @property
    def T(self):
        return self.frames.shape[1]

    @property
    def sample_shape(self):
        return self.frames.shape[2:]

    def subset(self, tag):
        keep = self.split == tag
        return Dataset(self.frames[keep], self.labels[keep], self.classes,
                       self.split[keep], self.seed, dict(self.descriptor, subset=tag))

    @property
    def train(self):
        return self.subset("train")

    @property
    def test(self):
        return self.subset("test")


def _make_split(n, test_fraction, rng):
    n_test = int(round(n * test_fraction))
    tags = np.array(["train"] * (n - n_test) + ["test"] * n_test)
    return tags[rng.permutation(n)]


def _balanced_labels(n, classes, rng):
    return rng.permutation(np.arange(n) % classes).astype(np.int64)


def blob_locations(hw):
    """Candidate blob centres: the cells of a grid with spacing 4 px."""
    g = max(2, hw // 4)
    step = hw / g
    return [((i + 0.5) * step, (j + 0.5) * step) for j in range(g) for i in range(g)]


def gen_synthetic_rgb(classes, n, hw, seed, noise=0.2, test_fraction=0.25):
    """Static 3-channel images: one Gaussian blob per class plus pixel noise.

    Class ``k`` places a blob at its own grid location with its own width
    and colour; samples of a class differ only by the additive noise.
    """
    if hw < 8:
        raise ConfigError("data.hw", "synthetic RGB images need hw >= 8")
    locs = blob_locations(hw)
    if classes > len(locs) or classes < 1:
        raise ConfigError("data.classes", f"{classes} classes but only {len(locs)} blob locations")
    rng = np.random.default_rng(seed)
    palette = np.random.default_rng(seed + 1).uniform(0.4, 1.0, size=(classes, 3))
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64) + 0.5
    protos = np.empty((classes, 3, hw, hw))
    for k in range(classes):
        cx, cy = locs[k * len(locs) // classes]
        sigma = hw / 8.0 * (1.0 + 0.5 * (k % 3))
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
        protos[k] = palette[k][:, None, None] * blob
    labels = _balanced_labels(n, classes, rng)
    frames = protos[labels] + noise * rng.standard_normal((n, 3, hw, hw))
    frames = frames.astype(np.float32)[:, None]
    split = _make_split(n, test_fraction, rng)
    desc = dict(kind="rgb", classes=classes, n=n, hw=hw, noise=noise)
    return Dataset(frames, labels, classes, split, seed, desc)


def _bar_intensity(hw, angle, offset, t, speed, width, region):
    y0, x0, size = region
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5 - size / 2.0
    ux, uy = math.cos(angle), math.sin(angle)
    proj = xx * ux + yy * uy
    img = np.zeros((hw, hw))
    img[y0:y0 + size, x0:x0 + size] = np.abs(proj - (offset + speed * t)) < width / 2.0
    return img


def gen_synthetic_dvs(classes, n, hw, T, seed, noise=0.0, speed=1.5, width=2.0,
                      static_class=False, quadrant=None, test_fraction=0.25):
    """Event-style frames of a bright bar moving in a class-specific direction.

    Directions are evenly spaced over the circle. Frames are ON/OFF
    polarity differences of consecutive renders, so ``C = 2`` and values
    are in {0, 1}. With ``static_class`` the last class has zero velocity.
    ``quadrant`` (0-3) confines the bar to one image quadrant; ``noise`` is
    the per-pixel probability of a spurious event.
    """
    if T < 1:
        raise ConfigError("T", "need at least one timestep")
    if classes < 1:
        raise ConfigError("data.classes", "need at least one class")
    moving = classes - 1 if static_class else classes
    rng = np.random.default_rng(seed)
    if quadrant is None:
        region = (0, 0, hw)
    else:
        half = hw // 2
        region = ((quadrant // 2) * half, (quadrant % 2) * half, half)
    size = region[2]
    labels = _balanced_labels(n, classes, rng)
    offsets = rng.uniform(-size / 4.0, size / 4.0, size=n)
    frames = np.zeros((n, T, 2, hw, hw), dtype=np.float32)
    for i in range(n):
        k = labels[i]
        v = 0.0 if (static_class and k == moving) else speed
        angle = 2 * math.pi * k / max(moving, 1)
        start = offsets[i] - v * T / 2.0
        prev = _bar_intensity(hw, angle, start, 0, v, width, region)
        for t in range(T):
            cur = _bar_intensity(hw, angle, start, t + 1, v, width, region)
            frames[i, t, 0] = cur > prev
            frames[i, t, 1] = cur < prev
            prev = cur
    if noise > 0:
        frames = np.maximum(frames, (rng.random(frames.shape) < noise).astype(np.float32))
    split = _make_split(n, test_fraction, rng)
    desc = dict(kind="dvs", classes=classes, n=n, hw=hw, T=T, noise=noise, quadrant=quadrant)
    return Dataset(frames, labels, classes, split, seed, desc)


@dataclass
class EventStream:
    """Address events ``(t [us], x, y, polarity)`` from a ``width x height`` sensor."""
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ContractError("event field lengths differ")
        if n:
            if np.any(np.diff(self.t) < 0):
                raise ContractError("event timestamps must be non-decreasing")
            if (self.x.min() < 0 or self.x.max() >= self.width
                    or self.y.min() < 0 or self.y.max() >= self.height):
                raise ContractError("event coordinates outside the sensor")
            if not np.isin(self.p, (0, 1)).all():
                raise ContractError("polarity must be 0 or 1")

    def __len__(self):
        return len(self.t)


def bin_events(stream, T, hw=None):
    """OR-accumulate events into ``[T, 2, H, W]`` binary frames over equal time bins."""
    if T < 1:
        raise ContractError("bin_events needs T >= 1")
    if hw is None:
        H, W = stream.height, stream.width
    elif isinstance(hw, int):
        H = W = hw
    else:
        H, W = hw
    if stream.width > W or stream.height > H:
        raise ContractError("frame smaller than the sensor")
    return kernels.bin_events(stream.t, stream.x, stream.y, stream.p, int(T), int(H), int(W))


# --- IDX ---------------------------------------------------------------------

_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX magic", offset=len(raw))
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) < head + count:
        raise FormatError(f"{path}: payload has {len(raw) - head} of {count} bytes",
                          offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path, labels_path, classes=10, test_fraction=0.0, seed=0):
    """Load IDX image/label files as a ``T = 1, C = 1`` dataset scaled to [0, 1]."""
    images = _read_idx(images_path, _IDX_IMAGES, 3)
    labels = _read_idx(labels_path, _IDX_LABELS, 1).astype(np.int64)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    if len(labels):
        classes = max(classes, int(labels.max()) + 1)
    frames = (images.astype(np.float32) / np.float32(255.0))[:, None, None]
    split = _make_split(len(labels), test_fraction, np.random.default_rng(seed))
    desc = dict(kind="idx", images=str(images_path), labels=str(labels_path))
    return Dataset(frames, labels, classes, split, seed, desc)


def write_idx(path, array):
    """Write a uint8 array in IDX format (3-D images or 1-D labels)."""
    arr = np.asarray(array, dtype=np.uint8)
    magic = {3: _IDX_IMAGES, 1: _IDX_LABELS}.get(arr.ndim)
    if magic is None:
        raise ContractError("write_idx supports 1-D labels or 3-D images")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


# --- SLTK tensor container ----------------------------------------------------

SLTK_MAGIC = b"SLTK"
SLTK_VERSION = 1


def encode_tensor(array):
    """Serialize an f32 array: magic, version, dtype, ndim, pad, u32 dims, payload."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    head = SLTK_MAGIC + struct.pack("<BBBx", SLTK_VERSION, 0, arr.ndim)
    return head + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()


def decode_tensor(buf, offset=0):
    """Parse one SLTK tensor at ``offset``; returns ``(array, next_offset)``."""
    if len(buf) - offset < 8:
        raise FormatError("truncated SLTK header", offset=offset)
    if buf[offset:offset + 4] != SLTK_MAGIC:
        raise FormatError("bad SLTK magic", offset=offset)
    version, dtype, ndim = struct.unpack_from("<BBB", buf, offset + 4)
    if version != SLTK_VERSION:
        raise FormatError(f"unsupported SLTK version {version}", offset=offset + 4)
    if dtype != 0:
        raise FormatError(f"unsupported SLTK dtype code {dtype}", offset=offset + 5)
    pos = offset + 8
    if len(buf) - pos < 4 * ndim:
        raise FormatError("truncated SLTK dims", offset=pos)
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    nbytes = 4 * int(np.prod(dims))
    if len(buf) - pos < nbytes:
        raise FormatError("truncated SLTK payload", offset=len(buf))
    arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
    return arr.astype(np.float32), pos + nbytes


def save_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after SLTK tensor", offset=end)
    return arr


# --- batching -------------------------------------------------------------------

def batch_iter(ds, batch, shuffle_seed=None):
    """Yield ``(frames [T, B, ...], labels)`` minibatches, last partial batch included."""
    if batch < 1:
        raise ContractError("batch size must be >= 1")
    n = len(ds)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        yield np.ascontiguousarray(ds.frames[idx].swapaxes(0, 1)), ds.labels[idx]
