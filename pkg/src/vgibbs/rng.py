"""Seed splitting: one root seed, independent per-job streams.

Job keys are folded into the SeedSequence spawn key, so the stream of a job
depends only on (root seed, key) and never on how many jobs run or in which
order.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_part(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("integer stream keys must be >= 0")
        return int(k)
    return zlib.crc32(str(k).encode())


def stream(seed: int, *key) -> np.random.Generator:
    """Generator for job ``key`` under root ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
