"""Deterministic seed derivation.

Every random draw in the package is tied to an explicit 64-bit seed derived
from a master seed plus a path of tags (family id, size, trial index,
purpose). Derivation uses a splitmix64 finalizer so nearby inputs give
uncorrelated streams, and string tags are absorbed with FNV-1a so results
are stable across processes and platforms.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4B7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def derive_seed(master: int, *parts: int | str) -> int:
    """Derive a child seed from ``master`` and a path of int/str tags."""
    z = master & _MASK
    for part in parts:
        if isinstance(part, str):
            v = _fnv1a(part.encode("utf-8"))
        else:
            v = int(part) & _MASK
        z = _mix((z + _GOLDEN) ^ v)
    return _mix(z + _GOLDEN)


def rng_from(master: int, *parts: int | str) -> np.random.Generator:
    """PCG64 generator seeded at ``derive_seed(master, *parts)``."""
    return np.random.default_rng(derive_seed(master, *parts))
