"""Shared plumbing: seeded RNG construction, canonical JSON, thread pool."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["rng_from_seed", "canonical_json", "parallel_map", "thread_count"]


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def canonical_json(obj) -> str:
    """Stable serialization: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def thread_count() -> int:
    raw = os.environ.get("HYBRIDCAT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def parallel_map(fn, items):
    """Order-preserving map, threaded when HYBRIDCAT_THREADS > 1.

    Results come back in input order regardless of completion order, so
    callers stay deterministic.
    """
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
