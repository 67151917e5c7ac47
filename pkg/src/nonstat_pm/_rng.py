"""Keyed random streams.

Every stream is a Philox generator whose key is derived from
``(seed, purpose, *keys)`` through :class:`numpy.random.SeedSequence`.
Draws therefore depend only on the key, never on evaluation order or on
how work is split between threads.
"""
from __future__ import annotations

import numpy as np

# purpose tags keep streams for different uses disjoint
OMEGA = 1
QDS_PERTURBATION = 2
ENSEMBLE = 3


def stream(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    words = [int(seed), int(purpose), *map(int, keys)]
    if any(w < 0 for w in words):
        raise ValueError("seeds and stream keys must be non-negative integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
