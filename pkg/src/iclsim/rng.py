"""Counter-based random streams.

Every run derives independent Philox streams from one root seed and a
string key, so a stochastic step never shares state with another one and
two runs that agree on (seed, key) see the same draws.
"""

import zlib

import numpy as np


def _key_words(key):
    if isinstance(key, int):
        return [key & 0xFFFFFFFF, (key >> 32) & 0xFFFFFFFF]
    return [zlib.crc32(str(key).encode("utf-8"))]


def stream(seed, *keys):
    """Return a ``numpy.random.Generator`` for ``seed`` and a path of keys."""
    spawn_key = []
    for k in keys:
        spawn_key.extend(_key_words(k))
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng_or_seed, *keys):
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return stream(rng_or_seed, *keys)
