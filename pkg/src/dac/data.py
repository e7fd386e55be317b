"""Synthetic Gaussian-blob datasets and label-noise injectors.

Every injector returns a new :class:`NoisyDataset`; the input is never mutated
and unselected samples are left bit-identical. Ground truth is kept alongside
the noisy labels:

* ``original_labels`` -- labels before any injection
* ``randomized`` -- the injector visited the sample (its label may still equal
  the original, since redraws are uniform over all k classes)
* ``structured`` -- a feature transform (smudge or degradation) was applied

Flags accumulate with logical OR when injectors are chained.
"""

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, FormatError, InvalidInputError, VersionError
from .seeding import derive_rng


@dataclass(frozen=True)
class NoisyDataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64, 0..k-1
    original_labels: np.ndarray
    randomized: np.ndarray  # (n,) bool
    structured: np.ndarray  # (n,) bool
    k: int
    description: str = ""

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def corrupted(self):
        """Samples whose current label differs from the original."""
        return self.labels != self.original_labels

    def subset(self, idx):
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            original_labels=self.original_labels[idx],
            randomized=self.randomized[idx],
            structured=self.structured[idx],
        )

    def _with(self, **kw):
        desc = kw.pop("note", None)
        if desc:
            kw["description"] = f"{self.description}; {desc}" if self.description else desc
        return replace(self, **kw)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str  # uniform | class_dependent_circular | smudge_correlated | degradation_correlated | class_randomization | none
    fraction_or_eta: float = 0.0
    seed: int = 0
    magnitude: float = 20.0  # smudge
    width: int = 1  # smudge
    offset: int = 0  # smudge block start
    blend_lambda: float = 0.8  # degradation
    target_class: int = 0  # class_randomization


KIND_ALIASES = {
    "none": "none",
    "clean": "none",
    "uniform": "uniform",
    "class_dependent": "class_dependent_circular",
    "class_dependent_circular": "class_dependent_circular",
    "circular": "class_dependent_circular",
    "smudge": "smudge_correlated",
    "smudge_correlated": "smudge_correlated",
    "degradation": "degradation_correlated",
    "degradation_correlated": "degradation_correlated",
    "class_randomization": "class_randomization",
}


def blob_centers(k, d, separation):
    """Cluster centers with pairwise distance >= ``separation``.

    d >= k: scaled standard basis (a regular simplex, all distances equal);
    d == 2: a regular k-gon; otherwise vertices of a scaled hypercube, which
    caps k at 2**d.
    """
    if k < 2 or d < 2:
        raise ConfigurationError("need k >= 2 classes and d >= 2 features")
    if not separation > 0:
        raise ConfigurationError("separation must be positive")
    if d >= k:
        return np.eye(k, d) * (separation / math.sqrt(2.0))
    if d == 2:
        radius = separation / (2.0 * math.sin(math.pi / k))
        t = 2.0 * math.pi * np.arange(k) / k
        return radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    if k > 2**d:
        raise ConfigurationError(f"cannot place {k} centers in {d} dims with the hypercube construction")
    bits = (np.arange(k)[:, None] >> np.arange(d)[None, :]) & 1
    return (bits * 2.0 - 1.0) * (separation / 2.0)


def gen_blobs(k, d, n_per_class, separation, seed):
    """k unit-covariance Gaussian clusters, samples shuffled, all flags clear."""
    centers = blob_centers(k, d, separation)
    if n_per_class < 0:
        raise ConfigurationError("n_per_class must be non-negative")
    rng = derive_rng(seed, "blobs")
    labels = np.repeat(np.arange(k), n_per_class)
    x = centers[labels] + rng.standard_normal((labels.size, d))
    perm = rng.permutation(labels.size)
    x, labels = x[perm], labels[perm].astype(np.int64)
    n = labels.size
    return NoisyDataset(
        features=x,
        labels=labels,
        original_labels=labels.copy(),
        randomized=np.zeros(n, bool),
        structured=np.zeros(n, bool),
        k=k,
        description=f"blobs(k={k}, d={d}, n_per_class={n_per_class}, separation={separation:g}, seed={seed})",
    )


def _check_fraction(fraction):
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError(f"fraction must lie in [0, 1], got {fraction}")


def _select(n, fraction, rng):
    m = int(math.floor(fraction * n))
    return np.sort(rng.choice(n, size=m, replace=False)) if m else np.zeros(0, np.int64)


def _redraw(ds, idx, rng, note, **extra):
    labels = ds.labels.copy()
    labels[idx] = rng.integers(0, ds.k, size=idx.size)
    randomized = ds.randomized.copy()
    randomized[idx] = True
    return ds._with(labels=labels, randomized=randomized, note=note, **extra)


def inject_uniform(ds, fraction, seed):
    _check_fraction(fraction)
    rng = derive_rng(seed, "noise.uniform")
    idx = _select(ds.n, fraction, rng)
    return _redraw(ds, idx, rng, f"uniform({fraction:g}, seed={seed})")


def inject_class_dependent(ds, eta, seed, mapping=None):
    """Flip each label c to ``mapping[c]`` with probability eta; default c -> (c + 1) mod k."""
    _check_fraction(eta)
    mapping = np.asarray(mapping if mapping is not None else (np.arange(ds.k) + 1) % ds.k)
    if mapping.shape != (ds.k,) or np.any(mapping < 0) or np.any(mapping >= ds.k):
        raise InvalidInputError("mapping must send each of the k classes to a class")
    rng = derive_rng(seed, "noise.class_dependent")
    flip = rng.random(ds.n) < eta
    labels = ds.labels.copy()
    labels[flip] = mapping[labels[flip]]
    randomized = ds.randomized | flip
    return ds._with(labels=labels, randomized=randomized, note=f"class_dependent({eta:g}, seed={seed})")


def inject_smudge(ds, fraction, magnitude, width, seed, offset=0, randomize=True):
    """Overwrite a fixed block of ``width`` coordinates with ``magnitude`` and redraw the label."""
    _check_fraction(fraction)
    if width < 0 or offset < 0 or offset + width > ds.d:
        raise InvalidInputError(f"smudge block [{offset}, {offset + width}) does not fit in d={ds.d}")
    rng = derive_rng(seed, "noise.smudge")
    idx = _select(ds.n, fraction, rng)
    x = ds.features.copy()
    x[idx, offset : offset + width] = magnitude
    structured = ds.structured.copy()
    structured[idx] = True
    note = f"smudge({fraction:g}, magnitude={magnitude:g}, width={width}, seed={seed})"
    if not randomize:
        return ds._with(features=x, structured=structured, note=note)
    return _redraw(ds, idx, rng, note, features=x, structured=structured)


def inject_degradation(ds, fraction, blend_lambda, seed, randomize=True):
    """Blend selected samples toward the dataset mean: x <- (1 - lam) x + lam * mean."""
    _check_fraction(fraction)
    if not 0.0 <= blend_lambda <= 1.0:
        raise InvalidInputError("blend_lambda must lie in [0, 1]")
    rng = derive_rng(seed, "noise.degradation")
    idx = _select(ds.n, fraction, rng)
    x = ds.features.copy()
    if idx.size:
        mean = ds.features.mean(axis=0)
        x[idx] = (1.0 - blend_lambda) * x[idx] + blend_lambda * mean
    structured = ds.structured.copy()
    structured[idx] = True
    note = f"degradation({fraction:g}, lambda={blend_lambda:g}, seed={seed})"
    if not randomize:
        return ds._with(features=x, structured=structured, note=note)
    return _redraw(ds, idx, rng, note, features=x, structured=structured)


def inject_class_randomization(ds, target_class, seed):
    """Uniformly redraw the label of every sample whose original class is ``target_class``."""
    if not 0 <= target_class < ds.k:
        raise InvalidInputError(f"target class {target_class} outside 0..{ds.k - 1}")
    rng = derive_rng(seed, "noise.class_randomization")
    idx = np.flatnonzero(ds.original_labels == target_class)
    return _redraw(ds, idx, rng, f"class_randomization({target_class}, seed={seed})")


def apply_noise(ds, spec: NoiseSpec, features_only=False):
    """Dispatch on ``spec.kind``. ``features_only`` applies structured transforms without label redraws."""
    kind = KIND_ALIASES.get(spec.kind)
    if kind is None:
        raise InvalidInputError(f"unknown noise kind {spec.kind!r}")
    f = spec.fraction_or_eta
    if kind == "none":
        return ds
    if kind == "uniform":
        return ds if features_only else inject_uniform(ds, f, spec.seed)
    if kind == "class_dependent_circular":
        return ds if features_only else inject_class_dependent(ds, f, spec.seed)
    if kind == "class_randomization":
        return ds if features_only else inject_class_randomization(ds, spec.target_class, spec.seed)
    if kind == "smudge_correlated":
        return inject_smudge(ds, f, spec.magnitude, spec.width, spec.seed, spec.offset, randomize=not features_only)
    return inject_degradation(ds, f, spec.blend_lambda, spec.seed, randomize=not features_only)


# --- file format ---------------------------------------------------------
#
# Little-endian layout:
#   b"DACDSET\0"       8 bytes magic
#   uint32 version
#   uint32 k, uint32 d, uint64 n
#   uint32 desc_len, desc_len bytes of UTF-8 description
#   n*d float64        features (row-major)
#   n   int32          labels
#   n   int32          original labels
#   n   uint8          flags: bit 0 randomized, bit 1 structured

DS_MAGIC = b"DACDSET\0"
DS_VERSION = 1
_HEAD = struct.Struct("<8sIIIQI")


def dataset_to_bytes(ds: NoisyDataset) -> bytes:
    desc = ds.description.encode("utf-8")
    flags = ds.randomized.astype(np.uint8) | (ds.structured.astype(np.uint8) << 1)
    return b"".join(
        [
            _HEAD.pack(DS_MAGIC, DS_VERSION, ds.k, ds.d, ds.n, len(desc)),
            desc,
            np.ascontiguousarray(ds.features, dtype="<f8").tobytes(),
            ds.labels.astype("<i4").tobytes(),
            ds.original_labels.astype("<i4").tobytes(),
            flags.astype(np.uint8).tobytes(),
        ]
    )


def dataset_from_bytes(buf: bytes) -> NoisyDataset:
    if len(buf) < _HEAD.size:
        raise FormatError("truncated dataset header", len(buf))
    magic, version, k, d, n, dlen = _HEAD.unpack_from(buf, 0)
    if magic != DS_MAGIC:
        raise FormatError("not a dataset file (bad magic)", 0)
    if version != DS_VERSION:
        raise VersionError(f"dataset version {version}, expected {DS_VERSION}", 8)
    off = _HEAD.size
    expected = off + dlen + n * d * 8 + n * 4 * 2 + n
    if len(buf) != expected:
        raise FormatError(f"dataset payload is {len(buf)} bytes, header implies {expected}", min(len(buf), expected))
    try:
        desc = buf[off : off + dlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("description is not UTF-8", off + exc.start) from None
    off += dlen
    x = np.frombuffer(buf, "<f8", n * d, off).reshape(n, d).astype(np.float64)
    off += n * d * 8
    labels = np.frombuffer(buf, "<i4", n, off).astype(np.int64)
    off += 4 * n
    orig = np.frombuffer(buf, "<i4", n, off).astype(np.int64)
    off += 4 * n
    flags = np.frombuffer(buf, np.uint8, n, off)
    for name, arr, base in (("label", labels, off - 8 * n), ("original label", orig, off - 4 * n)):
        bad = np.flatnonzero((arr < 0) | (arr >= k))
        if bad.size:
            raise FormatError(f"{name} {arr[bad[0]]} outside 0..{k - 1}", base + 4 * int(bad[0]))
    if np.any(flags > 3):
        raise FormatError("unknown flag bits", off + int(np.flatnonzero(flags > 3)[0]))
    return NoisyDataset(x, labels, orig, (flags & 1).astype(bool), (flags & 2).astype(bool), int(k), desc)


def save_dataset(ds: NoisyDataset, path):
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(ds))


def load_dataset(path) -> NoisyDataset:
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read())
