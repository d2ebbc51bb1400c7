"""Bounded thread pool for ensembles; the integrator kernel releases the GIL."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable


def workers() -> int:
    """Worker cap: ``SDDDE_THREADS`` if set, else the CPU count."""
    env = os.environ.get("SDDDE_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def pmap(fn: Callable, items: Iterable) -> list:
    """Order-preserving map; runs inline with a single worker."""
    items = list(items)
    n = workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
