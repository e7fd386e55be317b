"""Experiment configuration: flat ``section.key = value`` text files.

Example::

    # smudge run
    seed = 3
    data.k = 4
    noise.kind = smudge
    noise.fraction = 0.1
    train.epochs = 100
    train.warmup = 10
    train.anneal_epochs = 30, 60, 80

Blank lines and ``#`` comments are ignored. Keys are ``seed`` or
``<section>.<field>`` with sections ``data``, ``noise``, ``train``,
``downstream``, ``sweep`` and ``io``; anything else is rejected. Values are
parsed by the type of the field's default (tuples are comma-separated,
optional values accept ``none``).

``downstream.*`` keys that are not set inherit the resolved ``train.*`` value.
Randomness comes from the single top-level ``seed``: it seeds training
directly and is fanned out by role tag for data generation and noise.
"""

import dataclasses
import typing
from dataclasses import dataclass, field, replace

from .errors import ConfigurationError
from .pipeline import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    k: int = 4
    d: int = 2
    n_per_class: int = 1000
    separation: float = 10.0
    val_per_class: int = 250
    test_per_class: int = 250


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "none"
    fraction: float = 0.0  # noise fraction, or eta for class-dependent flips
    magnitude: float = 20.0
    width: int = 1
    offset: int = 0
    blend_lambda: float = 0.8
    target_class: int = 0


@dataclass(frozen=True)
class SweepConfig:
    alphas: tuple = (1e-3, 1e6)


@dataclass(frozen=True)
class IoConfig:
    train: str = ""
    val: str = ""
    test: str = ""
    checkpoint: str = ""
    out: str = ""


# TrainConfig.seed is driven by the top-level seed, not a config key
_TRAIN_SKIP = ("seed",)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    downstream: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    io: IoConfig = field(default_factory=IoConfig)

    def train_config(self):
        return replace(self.train, seed=self.seed)

    def downstream_config(self):
        return replace(self.downstream, seed=self.seed)


SECTIONS = {
    "data": DataConfig,
    "noise": NoiseConfig,
    "train": TrainConfig,
    "downstream": TrainConfig,
    "sweep": SweepConfig,
    "io": IoConfig,
}


def _section_fields(section):
    hints = typing.get_type_hints(SECTIONS[section])
    out = {}
    for f in dataclasses.fields(SECTIONS[section]):
        if SECTIONS[section] is TrainConfig and f.name in _TRAIN_SKIP:
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        out[f.name] = (hints[f.name], default)
    return out


def all_keys():
    """Every accepted key with its type and default, in a stable order."""
    keys = [("seed", int, 0)]
    for section in SECTIONS:
        for name, (tp, default) in _section_fields(section).items():
            keys.append((f"{section}.{name}", tp, default))
    return keys


def _key_spec(key):
    if key == "seed":
        return int, 0
    section, _, name = key.partition(".")
    if section not in SECTIONS or not name:
        raise ConfigurationError(f"unknown config key {key!r}")
    fields_ = _section_fields(section)
    if name not in fields_:
        raise ConfigurationError(f"unknown config key {key!r}")
    return fields_[name]


def _parse_scalar(tp, text, key):
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
    except ValueError:
        raise ConfigurationError(f"bad value {text!r} for {key} (expected {tp.__name__})") from None
    raise ConfigurationError(f"unsupported type for {key}")


def parse_value(key, text):
    tp, default = _key_spec(key)
    origin = typing.get_origin(tp)
    if origin is typing.Union:  # Optional[X]
        if text.strip().lower() in ("none", "null", ""):
            return None
        inner = [a for a in typing.get_args(tp) if a is not type(None)][0]
        return _parse_scalar(inner, text, key)
    if tp is tuple:
        elem = type(default[0]) if default else float
        parts = [p for p in text.replace(" ", "").split(",") if p]
        return tuple(_parse_scalar(elem, p, key) for p in parts)
    return _parse_scalar(tp, text, key)


def parse_text(text, source="<config>"):
    """``{key: raw string}`` from config-file text; duplicate or unknown keys are errors."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        _key_spec(key)
        if key in raw:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def load_text_file(path):
    with open(path) as f:
        return parse_text(f.read(), str(path))


def build(values=None) -> ExperimentConfig:
    """Resolve ``{key: value}`` (raw strings or already-typed values) over the defaults."""
    values = dict(values or {})
    typed = {}
    for key, v in values.items():
        typed[key] = parse_value(key, v) if isinstance(v, str) else v
        _key_spec(key)
    seed = typed.pop("seed", 0)
    per = {s: {} for s in SECTIONS}
    for key, v in typed.items():
        section, _, name = key.partition(".")
        per[section][name] = v
    train = TrainConfig(**per["train"])
    downstream = replace(train, **per["downstream"])
    cfg = ExperimentConfig(
        seed=int(seed),
        data=DataConfig(**per["data"]),
        noise=NoiseConfig(**per["noise"]),
        train=train,
        downstream=downstream,
        sweep=SweepConfig(**per["sweep"]),
        io=IoConfig(**per["io"]),
    )
    cfg.train_config().validate()
    cfg.downstream_config().validate()
    return cfg


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolved_items(cfg: ExperimentConfig):
    """``[(key, value)]`` for every key, fully resolved."""
    items = [("seed", cfg.seed)]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for name in _section_fields(section):
            items.append((f"{section}.{name}", getattr(obj, name)))
    return items


def dump(cfg: ExperimentConfig) -> str:
    """Config-file text that :func:`parse_text` + :func:`build` map back to ``cfg``."""
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in resolved_items(cfg))

