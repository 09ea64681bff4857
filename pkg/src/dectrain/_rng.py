"""Seeded random sub-streams.

Every stochastic component draws from its own PCG64 stream derived from the
master seed and a tuple of string/int keys, so adding draws in one component
never shifts another.
"""
import hashlib

import numpy as np


def _key_words(keys):
    words = []
    for k in keys:
        if isinstance(k, (int, np.integer)):
            words.append(int(k) & 0xFFFFFFFF)
            words.append((int(k) >> 32) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(str(k).encode("utf-8")).digest()
            words.append(int.from_bytes(digest[:4], "little"))
    return tuple(words)


def substream(seed, *keys):
    """Return an independent ``np.random.Generator`` for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_key_words(keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *keys):
    """A 63-bit integer seed derived from ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_key_words(keys))
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))
