"""Named, seed-derived random streams.

Every stochastic component asks for its own generator keyed by the run seed,
a stream name and optional extra keys (neuron id, step, ...), so results do
not depend on call order or batch composition.
"""

import zlib

import numpy as np


def _key(k):
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def substream(seed, name, *keys):
    """Return a ``numpy.random.Generator`` for ``(seed, name, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _key(name)] + [_key(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
