"""Uncompressed row-major run-length codec for binary masks.

Canonical form: alternating run counts starting with the zero run (which may
be 0), every later count positive, counts summing to the mask area.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel(order="C")
    if flat.size == 0:
        raise ValueError("cannot encode an empty array")
    breaks = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], breaks, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def decode(counts: Sequence[int], height: int, width: int) -> np.ndarray:
    counts = list(counts)
    if not counts:
        raise ValueError("empty run list")
    for i, c in enumerate(counts):
        if not isinstance(c, (int, np.integer)):
            raise ValueError(f"run count {c!r} is not an integer")
        if c < 0 or (c == 0 and i > 0):
            raise ValueError(f"run count at position {i} must be positive, got {c}")
    total = sum(counts)
    if total != height * width:
        raise ValueError(
            f"run counts sum to {total}, expected {height}x{width} = {height * width}"
        )
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(height, width)
