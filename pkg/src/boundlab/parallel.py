"""Deterministic indexed parallelism.

Work items are addressed by replication index; each item derives its own
random stream from ``(seed, index)``, so the assembled results are
identical for any worker count or chunking.  Workers are plain processes
(fork on Linux); payloads must be picklable.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Sequence, Tuple

import numpy as np

ChunkWorker = Callable[[tuple, Sequence[int]], list]


def _invoke(packed: Tuple[ChunkWorker, tuple, List[int]]) -> list:
    worker, payload, indices = packed
    return worker(payload, indices)


def run_indexed(
    worker: ChunkWorker, payload: tuple, n_items: int, workers: int = 1
) -> list:
    """Run ``worker(payload, indices)`` over ``range(n_items)``, chunked.

    Returns the concatenated per-index results in index order.
    """
    if workers <= 1 or n_items <= 1:
        return worker(payload, list(range(n_items)))
    chunks = [c.tolist() for c in np.array_split(np.arange(n_items), workers) if c.size]
    with ProcessPoolExecutor(max_workers=len(chunks)) as ex:
        parts = list(ex.map(_invoke, [(worker, payload, chunk) for chunk in chunks]))
    return [item for part in parts for item in part]
