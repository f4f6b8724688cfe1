"""Bounded worker pool for embarrassingly parallel ensemble loops.

The worker count comes from ``PASSIVITY_LAB_THREADS`` (default 1).  Results
are always returned in input order, so outputs do not depend on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    raw = os.environ.get("PASSIVITY_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"PASSIVITY_LAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def pmap(fn, items) -> list:
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
