"""Counter-based random streams.

Every random draw in the package is addressed by ``(seed, stream, step)``.
The key is derived from ``(seed, stream)`` through :class:`numpy.random.SeedSequence`
and the step goes into the high word of the Philox counter, so draws for
different steps never overlap and never depend on call order.
"""
import functools
import zlib

import numpy as np

GENERATOR_ID = "numpy.random.Philox(4x64)+SeedSequence"

# stream ids
NOISE = 1
BATCH = 2
PROBE = 3
INIT = 4
DATA = 5
SPHERE = 6
TEACHER = 7
STREAMS = ("NOISE", "BATCH", "PROBE", "INIT", "DATA", "SPHERE", "TEACHER")


def stream_id(name):
    """Stable integer id for a named stream."""
    return zlib.crc32(name.encode("utf-8"))


@functools.lru_cache(maxsize=1024)
def _key(seed, stream):
    ss = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(stream,))
    return tuple(int(k) for k in ss.generate_state(2, dtype=np.uint64))


def generator(seed, stream, step=0):
    """Return a fresh ``numpy.random.Generator`` for ``(seed, stream, step)``."""
    if isinstance(stream, str):
        stream = stream_id(stream)
    key = np.array(_key(int(seed), int(stream)), dtype=np.uint64)
    counter = np.array([0, 0, 0, int(step)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
