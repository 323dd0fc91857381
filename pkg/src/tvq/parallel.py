"""Deterministic per-item parallelism for tensor-level work.

Results are assembled in input order, so output never depends on the
worker count or scheduling.
"""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "TVQ_THREADS"


def resolve_threads(requested: int | None = None) -> int:
    """Pick the worker count: explicit arg, then TVQ_THREADS, then CPU count."""
    if requested is not None:
        n = int(requested)
    else:
        env = os.environ.get(ENV_THREADS, "").strip()
        n = int(env) if env else (os.cpu_count() or 1)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    return n


def map_ordered(fn, items, threads: int | None = None) -> list:
    """Apply `fn` to each item, preserving input order in the result."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
