"""Bounded worker pool with scheduling-independent output order."""

import os
from concurrent.futures import ProcessPoolExecutor


def default_workers():
    try:
        return max(1, int(os.environ.get("PERSIMORPH_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items, workers=None):
    """``list(map(fn, items))``, fanned out over processes when ``workers > 1``."""
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
