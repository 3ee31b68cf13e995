"""Seeded, reproducible random streams.

Every stochastic component draws from its own substream of a counter-based
Philox 4x64 generator. Substream keys are derived from (seed, id, ...) with a
splitmix64 chain, so streams are stable across process layout, thread count,
and call order. Both Philox and splitmix64 are published algorithms; a
reimplementation in another language can reproduce the raw bitstream (the
Gaussian variates additionally depend on numpy's ziggurat transform).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream tags keep substreams for different purposes disjoint even when the
# remaining ids coincide.
TAG_SCENARIO = 0x5343454E
TAG_OBS_NOISE = 0x4E4F4953
TAG_OCCLUSION = 0x4F43434C
TAG_TRACKER = 0x5452434B
TAG_LEARN = 0x4C45524E


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stream_key(seed: int, *ids: int) -> int:
    """Mix a 64-bit seed with any number of substream ids."""
    h = splitmix64(seed & _MASK64)
    for v in ids:
        h = splitmix64(h ^ (v & _MASK64))
    return h


def substream(seed: int, *ids: int) -> np.random.Generator:
    """Independent generator for the given (seed, ids...) tuple."""
    k = stream_key(seed, *ids)
    key = np.array([k, splitmix64(k)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
