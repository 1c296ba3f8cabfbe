"""
Counter-based random streams. Records are split into fixed-size chunks and every chunk draws
from its own Philox stream keyed by (seed, *keys, chunk index), so a result never depends on
the order (or the thread) in which chunks are processed.
"""
import hashlib

import numpy as np

CHUNK_SIZE = 4096


def stable_key(value):
    """
    Map an int, float or string to a non-negative integer that is identical across runs and
    machines (the builtin hash of a string is salted per process).
    """
    if isinstance(value, (int, np.integer)) and value >= 0:
        return int(value)
    digest = hashlib.blake2b(repr(value).encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'big')


def derive_seed(*parts):
    """Combine a base seed and any number of keys into a single 63-bit seed."""
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        digest.update(repr(stable_key(part)).encode('utf-8'))
        digest.update(b'/')
    return int.from_bytes(digest.digest(), 'big') >> 1


def generator(seed, *keys):
    """A Philox generator for the stream identified by (seed, *keys)."""
    sequence = np.random.SeedSequence(entropy=stable_key(seed),
                                      spawn_key=tuple(stable_key(key) for key in keys))
    return np.random.Generator(np.random.Philox(sequence))


def chunks(num_records, seed, *keys, chunk_size=CHUNK_SIZE):
    """
    Yield (slice, generator) pairs covering range(num_records) in fixed-size chunks.
    """
    for index, start in enumerate(range(0, num_records, chunk_size)):
        yield slice(start, min(start + chunk_size, num_records)), generator(seed, *keys, index)
