"""Experiment configuration: nested dataclasses read from flat ``section.key = value`` text.

Example::

    seed = 3
    model.arch = convnet
    model.channels = 8, 16, 32
    lif.T = 4
    ticket.mode = conn
    ticket.pr_c = 0.5

Lines starting with ``#`` are comments. Unknown keys are errors so typos in a
sweep never pass silently.
"""
from dataclasses import dataclass, field, fields, is_dataclass, replace
import typing

from .errors import ConfigError

ARCHS = ("mlp", "convnet", "spikeformer")
MODES = ("none", "conn", "patch", "ecpt")
DATASETS = ("synthetic-rgb", "synthetic-dvs", "idx")


@dataclass
class ModelConfig:
    arch: str = "mlp"
    variant: str = "snn"
    hidden: tuple = (128,)
    channels: tuple = (8, 16, 32)
    patch: int = 4
    dim: int = 32
    heads: int = 2
    depth: int = 2
    mlp_ratio: int = 2
    init_gain: float = 0.0  # 0 picks the architecture default


@dataclass
class LifConfig:
    T: int = 4
    lambda_decay: float = 0.99
    v_th: float = 1.0
    v_reset: float = 0.0
    surrogate_width: float = 1.0
    input_gain_mode: str = "unit"


@dataclass
class TicketConfig:
    mode: str = "none"
    pr_c: float = 0.5
    pr_p: float = 0.3


@dataclass
class OptimConfig:
    kind: str = "adam"
    lr: float = 1e-3
    score_lr: float = 1e-3
    batch: int = 32


@dataclass
class EpochConfig:
    conn: int = 30
    sp: int = 10
    train: int = 10


@dataclass
class DataConfig:
    kind: str = "synthetic-dvs"
    classes: int = 4
    n: int = 400
    hw: int = 16
    noise: float = 0.02
    test_fraction: float = 0.25
    quadrant: int = -1  # -1: whole frame
    static_class: bool = False
    images: str = ""
    labels: str = ""


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    lif: LifConfig = field(default_factory=LifConfig)
    ticket: TicketConfig = field(default_factory=TicketConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    epochs: EpochConfig = field(default_factory=EpochConfig)
    data: DataConfig = field(default_factory=DataConfig)


# sweep axis name -> dotted key
SWEEP_AXES = {"pr_c": "ticket.pr_c", "pr_p": "ticket.pr_p", "T": "lif.T", "lambda": "lif.lambda_decay"}


def _hints(cls):
    return typing.get_type_hints(cls)


def _parse_value(path, kind, text):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(path, f"cannot parse {text!r} as {kind.__name__}") from None
    return text


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def set_key(cfg, path, text):
    """Return a copy of ``cfg`` with the dotted ``path`` set from its text form."""
    parts = path.strip().split(".")
    if len(parts) > 2 or not all(parts):
        raise ConfigError(path, "unknown key")
    if len(parts) == 1:
        hints = _hints(type(cfg))
        if parts[0] not in hints or is_dataclass(hints[parts[0]]):
            raise ConfigError(path, "unknown key")
        return replace(cfg, **{parts[0]: _parse_value(path, hints[parts[0]], text)})
    section, key = parts
    top = _hints(type(cfg))
    if section not in top or not is_dataclass(top[section]):
        raise ConfigError(path, "unknown section")
    sub = getattr(cfg, section)
    hints = _hints(type(sub))
    if key not in hints:
        raise ConfigError(path, "unknown key")
    new_sub = replace(sub, **{key: _parse_value(path, hints[key], text)})
    return replace(cfg, **{section: new_sub})


def parse_config(text, base=None):
    """Parse flat ``key = value`` text on top of ``base`` (defaults if omitted)."""
    cfg = base if base is not None else ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        cfg = set_key(cfg, key.strip(), value)
    validate(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_overrides(cfg, overrides):
    """Apply ``key=value`` strings (as given to ``--set``)."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        cfg = set_key(cfg, key, value)
    validate(cfg)
    return cfg


def to_items(cfg):
    """Flatten to sorted-by-declaration ``(dotted_key, value)`` pairs."""
    items = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if is_dataclass(value):
            items += [(f"{f.name}.{g.name}", getattr(value, g.name)) for g in fields(value)]
        else:
            items.append((f.name, value))
    return items


def to_text(cfg):
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in to_items(cfg))


def validate(cfg):
    def check(ok, path, msg):
        if not ok:
            raise ConfigError(path, msg)

    m, lif, t, o, e, d = cfg.model, cfg.lif, cfg.ticket, cfg.optim, cfg.epochs, cfg.data
    check(m.arch in ARCHS, "model.arch", f"must be one of {ARCHS}")
    check(m.variant in ("ann", "bnn", "bin_act_bnn", "snn", "bin_w_snn"), "model.variant", "unknown variant")
    check(m.arch != "spikeformer" or m.variant == "snn", "model.variant", "spikeformer is spiking only")
    check(all(h > 0 for h in m.hidden), "model.hidden", "widths must be positive")
    check(len(m.channels) > 0 and all(c > 0 for c in m.channels), "model.channels", "need positive widths")
    check(m.patch >= 2 and m.patch & (m.patch - 1) == 0, "model.patch", "must be a power of two >= 2")
    check(m.dim > 0 and m.heads > 0 and m.dim % m.heads == 0, "model.dim", "must be a positive multiple of heads")
    check(m.depth >= 1, "model.depth", "must be >= 1")
    check(m.init_gain >= 0, "model.init_gain", "must be >= 0")
    check(lif.T >= 1, "lif.T", "must be >= 1")
    check(0.0 < lif.lambda_decay <= 1.0, "lif.lambda_decay", "must be in (0, 1]")
    check(lif.v_th > lif.v_reset, "lif.v_th", "must exceed v_reset")
    check(lif.surrogate_width > 0, "lif.surrogate_width", "must be positive")
    check(lif.input_gain_mode in ("unit", "coupled"), "lif.input_gain_mode", "must be unit or coupled")
    check(t.mode in MODES, "ticket.mode", f"must be one of {MODES}")
    check(0.0 <= t.pr_c < 1.0, "ticket.pr_c", "must be in [0, 1)")
    check(0.0 <= t.pr_p < 1.0, "ticket.pr_p", "must be in [0, 1)")
    check(t.mode not in ("patch", "ecpt") or m.arch == "spikeformer", "ticket.mode",
          "patch tickets need the spikeformer")
    check(o.kind in ("adam", "sgd"), "optim.kind", "must be adam or sgd")
    check(o.lr > 0 and o.score_lr > 0, "optim.lr", "learning rates must be positive")
    check(o.batch >= 1, "optim.batch", "must be >= 1")
    for name in ("conn", "sp", "train"):
        check(getattr(e, name) >= 0, f"epochs.{name}", "must be >= 0")
    check(d.kind in DATASETS, "data.kind", f"must be one of {DATASETS}")
    check(d.classes >= 2, "data.classes", "need at least two classes")
    check(d.n >= 2, "data.n", "need at least two samples")
    check(0.0 < d.test_fraction < 1.0, "data.test_fraction", "must be in (0, 1)")
    check(d.noise >= 0, "data.noise", "must be >= 0")
    check(d.quadrant in (-1, 0, 1, 2, 3), "data.quadrant", "must be -1 or 0..3")
    check(d.kind != "idx" or (d.images and d.labels), "data.images", "idx data needs images and labels paths")
    return cfg
