"""Ordered fan-out of independent replication tasks."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "SUPERMARKET_WORKERS"


def resolve_workers(requested: int | None = None) -> int:
    """Worker count; the SUPERMARKET_WORKERS environment variable wins."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, int(requested or 1))


def run_tasks(fn, tasks, workers: int = 1) -> list:
    """Map ``fn`` over ``tasks`` preserving order, so reductions are identical
    whether run serially or in a pool."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))
