"""Deterministic fan-out of independent Monte-Carlo trials."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "TBDCFAR_WORKERS"


def default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_chunk(fn, indices):
    return [fn(i) for i in indices]


def map_trials(fn, n_trials, workers=1, chunk_size=None):
    """Evaluate ``fn(i)`` for ``i in range(n_trials)`` and return results in index order.

    ``fn`` must be picklable when ``workers > 1``.  Each trial derives its own
    random stream from its index, so the output does not depend on
    ``workers``.
    """
    if workers is None:
        workers = default_workers()
    if workers <= 1 or n_trials < 2:
        return [fn(i) for i in range(n_trials)]
    chunk_size = chunk_size or max(1, n_trials // (4 * workers))
    chunks = [range(a, min(a + chunk_size, n_trials)) for a in range(0, n_trials, chunk_size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, fn, list(c)) for c in chunks]
        out = []
        for f in futures:
            out.extend(f.result())
    return out
