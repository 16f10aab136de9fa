"""Seed splitting.

Every random stream derives from one 64-bit master seed. A stream is named by
a string plus optional integer indices and gets the generator
``PCG64(SeedSequence(seed, spawn_key=(crc32(name), *indices)))``. Streams are
therefore independent of the order in which they are created and of how work
is split across threads.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *indices: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
