"""A small ReLU multilayer perceptron trained with momentum SGD.

Parameters are float64 throughout. The output layer is linear and produces
logits; for an abstaining classifier its width is ``k + 1``.
"""

import json
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, InvalidInputError, NumericFailureError, VersionError
from .seeding import derive_rng


@dataclass
class Mlp:
    weights: List[np.ndarray]  # weights[i] has shape (fan_in, fan_out)
    biases: List[np.ndarray]
    # fixed (untrained) input standardization: x -> (x - shift) / scale
    input_shift: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[1]

    def params(self):
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def copy(self):
        shift = None if self.input_shift is None else self.input_shift.copy()
        scale = None if self.input_scale is None else self.input_scale.copy()
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], shift, scale)

    def fit_input_scaling(self, x):
        """Standardize inputs with the per-feature mean and std of ``x`` (constant features keep scale 1)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            return self
        sd = x.std(axis=0)
        self.input_shift = x.mean(axis=0)
        self.input_scale = np.where(sd > 0, sd, 1.0)
        return self

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])


def mlp_new(layer_dims: Sequence[int], seed: int) -> Mlp:
    """He-style init: W ~ N(0, 2 / fan_in), zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"bad layer dims {layer_dims!r}")
    rng = derive_rng(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def _check_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise InvalidInputError(f"expected (n, {model.layer_dims[0]}) features, got {x.shape}")
    return x


def _forward_cache(model, x):
    if model.input_shift is not None:
        x = (x - model.input_shift) / model.input_scale
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(model: Mlp, x) -> np.ndarray:
    return _forward_cache(model, _check_batch(model, x))[-1]


def backward(model: Mlp, x, logit_grads) -> List[np.ndarray]:
    """Parameter gradients (same order as ``model.params()``) given dLoss/dlogits."""
    x = _check_batch(model, x)
    g = np.asarray(logit_grads, dtype=np.float64)
    if g.shape != (x.shape[0], model.n_outputs):
        raise InvalidInputError(f"logit grads shape {g.shape} does not match ({x.shape[0]}, {model.n_outputs})")
    acts = _forward_cache(model, x)
    grads = [None] * (2 * len(model.weights))
    for i in reversed(range(len(model.weights))):
        h_in = acts[i]
        grads[2 * i] = h_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ model.weights[i].T) * (acts[i] > 0.0)
    return grads


@dataclass
class OptimizerState:
    velocity: List[np.ndarray]
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True

    @classmethod
    def for_model(cls, model, momentum=0.9, weight_decay=5e-4, nesterov=True):
        if not 0.0 <= momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if weight_decay < 0.0:
            raise ConfigurationError("weight_decay must be non-negative")
        return cls([np.zeros_like(p) for p in model.params()], momentum, weight_decay, nesterov)

    def copy(self):
        return OptimizerState([v.copy() for v in self.velocity], self.momentum, self.weight_decay, self.nesterov)


def sgd_step(model: Mlp, opt: OptimizerState, grads, lr: float):
    """In-place update, mirroring torch.optim.SGD with dampening 0.

    g' = g + wd * w;  v = m * v + g';  w -= lr * (g' + m * v) if nesterov else lr * v
    """
    params = model.params()
    if len(grads) != len(params) or len(opt.velocity) != len(params):
        raise InvalidInputError("gradient / velocity list does not match the model")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericFailureError("non-finite gradient")
    m, wd = opt.momentum, opt.weight_decay
    for w, g, v in zip(params, grads, opt.velocity):
        if g.shape != w.shape:
            raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {w.shape}")
        d = g + wd * w if wd else g
        v *= m
        v += d
        w -= lr * (d + m * v) if opt.nesterov else lr * v
    return model, opt


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 0.1
    anneal_epochs: tuple = (60, 120, 160)
    anneal_factor: float = 0.5

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ConfigurationError("initial_lr must be positive")
        if not 0 < self.anneal_factor < 1:
            raise ConfigurationError("anneal_factor must lie in (0, 1)")
        if list(self.anneal_epochs) != sorted(self.anneal_epochs):
            raise ConfigurationError("anneal_epochs must be sorted")

    def scaled(self, factor):
        """Same schedule stretched by ``factor`` (used when training on fewer samples)."""
        return LrSchedule(self.initial_lr, tuple(int(round(e * factor)) for e in self.anneal_epochs), self.anneal_factor)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    n = sum(1 for e in schedule.anneal_epochs if e <= epoch)
    return schedule.initial_lr * schedule.anneal_factor**n


# --- checkpoints ---------------------------------------------------------
#
# Layout (little-endian):
#   b"DACMODEL"            8 bytes magic
#   uint32 version
#   uint32 header_len
#   header_len bytes       UTF-8 JSON: layer_dims, epoch, momentum, weight_decay,
#                          nesterov, has_velocity, meta
#   float64 payload        params in model.params() order, then velocities (if any)

CKPT_MAGIC = b"DACMODEL"
CKPT_VERSION = 1


def save_checkpoint(path, model: Mlp, opt: OptimizerState = None, epoch: int = 0, meta=None):
    header = {
        "layer_dims": model.layer_dims,
        "epoch": int(epoch),
        "has_velocity": opt is not None,
        "has_input_scaling": model.input_shift is not None,
        "momentum": opt.momentum if opt else None,
        "weight_decay": opt.weight_decay if opt else None,
        "nesterov": opt.nesterov if opt else None,
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(hb)), hb]
    arrays = model.params() + (opt.velocity if opt else [])
    if model.input_shift is not None:
        arrays = arrays + [model.input_shift, model.input_scale]
    chunks.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_checkpoint(path):
    """Returns ``(model, opt_or_None, epoch, meta)``."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != CKPT_MAGIC:
        raise FormatError("not a model checkpoint (bad magic)", 0)
    if len(buf) < 16:
        raise FormatError("truncated checkpoint header", len(buf))
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != CKPT_VERSION:
        raise VersionError(f"checkpoint version {version}, expected {CKPT_VERSION}", 8)
    if len(buf) < 16 + hlen:
        raise FormatError("truncated checkpoint header", len(buf))
    try:
        header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
        dims = [int(d) for d in header["layer_dims"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}", 16) from None
    shapes = []
    for a, b in zip(dims[:-1], dims[1:]):
        shapes.extend(((a, b), (b,)))
    n = len(shapes)
    if header.get("has_velocity"):
        shapes = shapes + shapes
    if header.get("has_input_scaling"):
        shapes = shapes + [(dims[0],), (dims[0],)]
    offset = 16 + hlen
    arrays = []
    for shape in shapes:
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(buf):
            raise FormatError("truncated checkpoint payload", offset)
        arrays.append(np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64))
        offset += nbytes
    if offset != len(buf):
        raise FormatError("trailing bytes after checkpoint payload", offset)
    params = arrays[:n]
    model = Mlp(params[0::2], params[1::2])
    rest = arrays[n:]
    opt = None
    if header.get("has_velocity"):
        opt = OptimizerState(rest[:n], header["momentum"], header["weight_decay"], header["nesterov"])
        rest = rest[n:]
    if header.get("has_input_scaling"):
        model.input_shift, model.input_scale = rest
    return model, opt, header["epoch"], header.get("meta", {})
