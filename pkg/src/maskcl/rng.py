"""Deterministic, named random streams.

Every consumer of randomness derives its own generator from the run seed plus
a stable tag path, so adding or reordering consumers never shifts anyone
else's stream.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, *tags) -> np.random.Generator:
    """Generator for (seed, tag path); tags may be strings or integers."""
    entropy = [int(seed) & _MASK64]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & _MASK64)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
