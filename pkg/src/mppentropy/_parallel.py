"""Ordered map over work items with an optional thread pool.

The compiled kernels release the GIL, so threads give real parallelism; the
output order is the input order regardless of the worker count.
"""
import os
from concurrent.futures import ThreadPoolExecutor

_DEFAULT_THREADS = 0


def set_default_threads(n):
    global _DEFAULT_THREADS
    _DEFAULT_THREADS = max(0, int(n))


def resolve_threads(threads=None):
    n = _DEFAULT_THREADS if threads is None else int(threads)
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ordered_map(fn, items, threads=None):
    items = list(items)
    n = min(resolve_threads(threads), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
