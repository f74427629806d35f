"""Deterministic RNG derivation from mixed string/integer keys.

String keys are hashed with CRC-32 rather than ``hash()`` so streams are
stable across processes and interpreter versions.
"""

from __future__ import annotations

from zlib import crc32

import numpy as np


def stable_key(value: int | str) -> int:
    if isinstance(value, (int, np.integer)):
        if value < 0:
            raise ValueError(f"rng keys must be non-negative, got {value}")
        return int(value)
    return crc32(str(value).encode("utf-8"))


def derive_rng(*keys: int | str) -> np.random.Generator:
    """Build a generator whose stream is a pure function of the key tuple."""
    return np.random.default_rng([stable_key(k) for k in keys])
