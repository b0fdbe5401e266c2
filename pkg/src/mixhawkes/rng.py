"""Random stream derivation.

Every stream is ``PCG64(SeedSequence(seed, spawn_key=key))`` where the key
is a tuple of small integers naming the consumer, e.g. ``(STREAM_CHAIN,
chain_id)`` or ``(STREAM_STUDY, replicate, subject)``. Streams never
depend on worker counts or scheduling.
"""
import numpy as np

STREAM_CHAIN = 1
STREAM_STUDY = 2
STREAM_PPC = 3

SCHEME = "numpy PCG64 over SeedSequence(seed, spawn_key=(stream, *indices))"


def stream(seed, *key):
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
