"""Per-purpose random streams derived from a single run seed.

Every random draw in the package comes from ``stream(seed, purpose, *index)``.
The stream is a fresh ``numpy.random.Generator`` seeded by
``SeedSequence(seed, spawn_key=(PURPOSE_ID, *index))``, so a stream depends
only on the run seed, the purpose, and the integer indices (epoch, step,
image number, ...). Nothing is carried between calls, which is what makes
training resumable at any epoch boundary without saving generator state.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "init": 0,
    "shuffle": 1,
    "crop": 2,
    "noise": 3,
    "split": 4,
    "simulate": 5,
    "validate": 6,
}


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    if purpose not in PURPOSES:
        raise KeyError(f"unknown random stream purpose {purpose!r}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = (PURPOSES[purpose],) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
