import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

logger = logging.getLogger(__name__)

THREADS_ENV = 'TAILLAB_THREADS'


def default_workers():
    """Worker count from the environment, 1 when unset or invalid"""
    raw = os.environ.get(THREADS_ENV, '')
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def fan_out(func, tasks, workers=None):
    """
    Map a module-level function over tasks.

    Results come back in task order whatever the worker count, so every
    reduction downstream is schedule-independent.
    """
    tasks = list(tasks)
    if workers is None:
        workers = default_workers()

    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]

    workers = min(workers, len(tasks))
    logger.debug("fanning %d tasks over %d workers", len(tasks), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


def derived_rng(seed, *indices):
    """Independent PCG64 generator for the cell (seed, *indices)"""
    return np.random.Generator(np.random.PCG64(derived_seed(seed, *indices)))


def derived_seed(seed, *indices):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(i) for i in indices]])


def split(items, parts):
    """Split items into at most `parts` contiguous, order-preserving chunks"""
    items = list(items)
    parts = max(1, min(parts, len(items)))
    size, extra = divmod(len(items), parts)
    chunks, start = [], 0
    for index in range(parts):
        end = start + size + (1 if index < extra else 0)
        chunks.append(items[start:end])
        start = end
    return chunks


def cell_seed(seed, *indices):
    """64-bit integer seed for the cell (seed, *indices)"""
    return int(derived_seed(seed, *indices).generate_state(1, np.uint64)[0])
