"""Seed fan-out.

Every random stream in an experiment is derived from one top-level integer
seed and a role tag::

    rng = np.random.default_rng([seed, crc32(role)])

so e.g. ``derive_rng(7, "init")`` and ``derive_rng(7, "shuffle")`` are
independent, and both are reproducible from ``seed=7`` alone.
"""

import zlib

import numpy as np


def role_key(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


def derive_rng(seed: int, role: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), role_key(role)])


def derive_seed(seed: int, role: str) -> int:
    """A plain integer seed for a sub-run (e.g. one alpha of a sweep)."""
    return int(derive_rng(seed, role).integers(0, 2**31 - 1))
