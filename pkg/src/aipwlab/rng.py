"""Counter-based random streams: one independent Philox stream per replication."""
from __future__ import annotations

import numpy as np


def replication_streams(seed: int, reps: int, offset: int = 0) -> list[np.random.Generator]:
    """Return generators for replications ``offset .. offset + reps - 1``.

    Stream ``k`` depends only on ``(seed, k)``, so any chunking of the
    replications over workers reproduces the same draws.
    """
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))
        for k in range(offset, offset + reps)
    ]


def stream(seed: int, key: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


def replication_uniforms(seed: int, reps: int, n: int, width: int = 3, offset: int = 0) -> np.ndarray:
    """Uniform draws of shape ``(reps, n, width)``, one row block per replication."""
    out = np.empty((reps, n, width))
    for r, g in enumerate(replication_streams(seed, reps, offset)):
        out[r] = g.random((n, width))
    return out
