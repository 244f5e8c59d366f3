"""Seeded, splittable random streams.

Every stream is a Philox (counter-based) generator keyed by a
``SeedSequence``; replicate ``i`` of an experiment with master seed ``s``
always gets the same stream, whatever order replicates run in.
"""
import numpy as np

SEED_MASK = (1 << 64) - 1


def stream(seed, index=None):
    """Generator for ``seed`` or, with ``index``, for replicate ``index``."""
    seed = int(seed) & SEED_MASK
    key = () if index is None else (int(index),)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def streams(seed, indices):
    return [stream(seed, i) for i in indices]
