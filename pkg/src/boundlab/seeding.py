"""Derived-seed helpers.

Every randomized routine takes an integer seed and derives independent
child streams through ``numpy.random.SeedSequence`` spawn keys.  A
replication's stream depends only on ``(seed, *path)``, never on worker
scheduling, so results are identical for any worker count.
"""

from __future__ import annotations

import numpy as np


def derived_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the child stream addressed by ``path`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)


def fold_seed(seed: int, index: int) -> int:
    """A distinct integer seed per (seed, index), for APIs taking one seed.

    Assumes ``0 <= index < 2**20``; distinct pairs under a common base
    seed map to distinct integers.
    """
    if not 0 <= index < (1 << 20):
        raise ValueError("index out of range for seed folding")
    return (int(seed) << 20) + int(index)
