"""Deterministic RNG substreams derived from a single user-facing seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, keys).

    String keys are hashed with crc32 so stream identities are stable across
    runs and platforms; integer keys are used as-is.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode("utf-8")))
        else:
            entropy.append(int(k) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
