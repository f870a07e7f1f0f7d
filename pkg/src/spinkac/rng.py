"""Reproducible random streams.

Streams are derived, not spawned statefully: ``seed_split(master, k)``
hashes the pair through numpy's SeedSequence, so any worker can rebuild
its own stream from (master seed, stream index) alone and the result is
independent of scheduling order. Generators use Philox, a counter-based
engine, so a fixed (key, draw sequence) is bitwise reproducible.
"""

from __future__ import annotations

import numpy as np


def seed_split(master_seed, stream_id):
    """Derive a 128-bit stream seed from a master seed and a stream index."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream_id),))
    words = ss.generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def make_rng(master_seed, stream_id=0):
    """Counter-based generator for the given (master, stream) pair."""
    return np.random.Generator(np.random.Philox(key=seed_split(master_seed, stream_id)))
