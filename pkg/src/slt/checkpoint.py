"""Binary checkpoints: a table of named sections, each length-prefixed and CRC32-checked.

Layout (little-endian)::

    "SLTC" | u16 version | u32 toc_len | toc (JSON list of section names) | u32 crc(toc)
    per section: u64 payload_len | u32 crc(payload) | payload

Sections: ``config`` (flat text), ``model`` (architecture JSON), one
``layer:<name>`` per masked layer (JSON meta, SLTK tensors w/s/m, f64 gain),
one ``tensor:<name>`` per extra tensor, optional ``ticket`` and ``rng``
(JSON). Every JSON is written with sorted keys so equal state gives equal
bytes.
"""
from dataclasses import asdict, dataclass
import json
import struct
import zlib

import numpy as np

from .config import ExperimentConfig, parse_config, to_text
from .data import decode_tensor, encode_tensor
from .errors import FormatError
from .models import SpikeformerToy, SpikingConvNet, SpikingMLP
from .snn import LifParams
from .tensor import Tensor

MAGIC = b"SLTC"
VERSION = 1
_ARCH_CLASSES = {"mlp": SpikingMLP, "convnet": SpikingConvNet, "spikeformer": SpikeformerToy}


@dataclass
class Checkpoint:
    model: object
    config: ExperimentConfig = None
    ticket: dict = None
    rng: dict = None


def _json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _layer_payload(layer):
    meta = _json(dict(kind=layer.kind, mode=layer.mode, stride=layer.stride, padding=layer.padding,
                      prune_rate=layer.prune_rate, weight_frozen=layer.weight_frozen,
                      searching=bool(layer.s.requires_grad)))
    return (struct.pack("<I", len(meta)) + meta + encode_tensor(layer.w.data)
            + encode_tensor(layer.s.data) + encode_tensor(layer.m) + struct.pack("<d", layer.alpha))


def _model_payload(model):
    return _json(dict(arch=model.arch, spec=model.spec, variant=model.variant, T=model.T,
                      init_gain=model.init_gain, lif=asdict(model.lif)))


def encode_checkpoint(model, config=None, ticket=None, rng=None):
    sections = [("config", to_text(config or ExperimentConfig()).encode()),
                ("model", _model_payload(model))]
    sections += [(f"layer:{n}", _layer_payload(l)) for n, l in model.layers().items()]
    sections += [(f"tensor:{n}", encode_tensor(t.data)) for n, t in model.tensors().items()]
    if ticket is not None:
        sections.append(("ticket", _json(ticket)))
    if rng is not None:
        sections.append(("rng", _json(rng)))
    toc = _json([name for name, _ in sections])
    out = [MAGIC, struct.pack("<HI", VERSION, len(toc)), toc, struct.pack("<I", zlib.crc32(toc))]
    for _, payload in sections:
        out.append(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        out.append(payload)
    return b"".join(out)


def save_checkpoint(path, model, config=None, ticket=None, rng=None):
    data = encode_checkpoint(model, config, ticket, rng)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def _read_sections(buf):
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad SLTC magic)", offset=0)
    version, toc_len = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise FormatError(f"checkpoint version {version}, expected {VERSION}", offset=4)
    pos = 10
    if len(buf) < pos + toc_len + 4:
        raise FormatError("truncated checkpoint: section 'toc' is incomplete", offset=len(buf), section="toc")
    toc = buf[pos:pos + toc_len]
    (crc,) = struct.unpack_from("<I", buf, pos + toc_len)
    if zlib.crc32(toc) != crc:
        raise FormatError("CRC mismatch in section 'toc'", offset=pos, section="toc")
    names = json.loads(toc)
    pos += toc_len + 4
    sections = {}
    for name in names:
        if len(buf) < pos + 12:
            raise FormatError(f"truncated checkpoint: missing section {name!r}", offset=len(buf), section=name)
        length, crc = struct.unpack_from("<QI", buf, pos)
        pos += 12
        if len(buf) < pos + length:
            raise FormatError(f"truncated checkpoint: section {name!r} is incomplete",
                              offset=len(buf), section=name)
        payload = buf[pos:pos + length]
        if zlib.crc32(payload) != crc:
            raise FormatError(f"CRC mismatch in section {name!r}", offset=pos, section=name)
        sections[name] = payload
        pos += length
    if pos != len(buf):
        raise FormatError("trailing bytes after the last section", offset=pos)
    for required in ("config", "model"):
        if required not in sections:
            raise FormatError(f"missing section {required!r}", section=required)
    return sections


def _restore_layer(layer, payload, name):
    (meta_len,) = struct.unpack_from("<I", payload, 0)
    meta = json.loads(payload[4:4 + meta_len])
    pos = 4 + meta_len
    w, pos = decode_tensor(payload, pos)
    s, pos = decode_tensor(payload, pos)
    m, pos = decode_tensor(payload, pos)
    if w.shape != layer.shape or s.shape != layer.shape or m.shape != layer.shape:
        raise FormatError(f"layer {name}: stored shape {w.shape} does not match {layer.shape}",
                          section=f"layer:{name}")
    (alpha,) = struct.unpack_from("<d", payload, pos)
    layer.kind, layer.mode = meta["kind"], meta["mode"]
    layer.stride, layer.padding = meta["stride"], meta["padding"]
    layer.prune_rate, layer.weight_frozen = meta["prune_rate"], meta["weight_frozen"]
    layer.w = Tensor(w, requires_grad=not layer.weight_frozen)
    layer.s = Tensor(s, requires_grad=meta["searching"])
    layer.m = np.array(m, dtype=np.float32)
    layer.alpha = alpha


def decode_checkpoint(buf):
    sections = _read_sections(bytes(buf))
    config = parse_config(sections["config"].decode())
    info = json.loads(sections["model"])
    cls = _ARCH_CLASSES.get(info["arch"])
    if cls is None:
        raise FormatError(f"unknown architecture {info['arch']!r}", section="model")
    kwargs = dict(info["spec"], T=info["T"], lif=LifParams(**info["lif"]), init_gain=info["init_gain"])
    if cls is not SpikeformerToy:
        kwargs["variant"] = info["variant"]
    model = cls(**kwargs)
    for name, layer in model.layers().items():
        key = f"layer:{name}"
        if key not in sections:
            raise FormatError(f"missing section {key!r}", section=key)
        _restore_layer(layer, sections[key], name)
    for name in list(model.tensors()):
        key = f"tensor:{name}"
        if key not in sections:
            raise FormatError(f"missing section {key!r}", section=key)
        arr, _ = decode_tensor(sections[key])
        model.tensors()[name] = Tensor(arr, requires_grad=model.tensors()[name].requires_grad)
    ticket = json.loads(sections["ticket"]) if "ticket" in sections else None
    rng = json.loads(sections["rng"]) if "rng" in sections else None
    return Checkpoint(model, config, ticket, rng)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def describe_checkpoint(path):
    """Section names and payload sizes, for ``inspect-checkpoint``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    sections = _read_sections(buf)
    info = json.loads(sections["model"])
    return dict(bytes=len(buf), version=VERSION, arch=info["arch"], variant=info["variant"], T=info["T"],
                sections={name: len(p) for name, p in sections.items()})
