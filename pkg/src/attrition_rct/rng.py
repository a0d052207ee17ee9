"""Counter-based seed derivation.

Child streams are keyed by ``(master_seed, *keys)`` through
:class:`numpy.random.SeedSequence` spawn keys, so the stream for replication
``r`` does not depend on how many replications ran before it or on which
worker executes it.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | np.integer | np.random.SeedSequence

_MASK64 = (1 << 64) - 1


def seed_sequence(seed: SeedLike, *keys: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        base_entropy = seed.entropy
        base_keys = tuple(seed.spawn_key)
    else:
        base_entropy = int(seed) & _MASK64
        base_keys = ()
    return np.random.SeedSequence(base_entropy, spawn_key=base_keys + tuple(int(k) for k in keys))


def generator(seed: SeedLike, *keys: int) -> np.random.Generator:
    """Independent PCG64 generator for the stream ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def child_seed(seed: SeedLike, *keys: int) -> int:
    """64-bit integer seed for the stream ``(seed, *keys)``."""
    return int(seed_sequence(seed, *keys).generate_state(1, np.uint64)[0])
