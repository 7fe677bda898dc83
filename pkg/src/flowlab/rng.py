"""Deterministic PRNG streams.

Every simulation, generator and training run owns a ``numpy`` PCG64 stream
derived from the master seed and a tuple of keys.  Keys may be integers or
strings; strings are folded to 32-bit integers with CRC32 so that the mapping
is stable across processes and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def stream(master_seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(master_seed, *keys)``.

    Uses ``SeedSequence(master_seed, spawn_key=keys)``, i.e. the same
    construction ``SeedSequence.spawn`` applies, addressed by key instead of
    by spawn order.
    """
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(master_seed: int, *keys) -> int:
    """A 63-bit integer seed for ``(master_seed, *keys)``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    lo, hi = (int(w) for w in seq.generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) >> 1
