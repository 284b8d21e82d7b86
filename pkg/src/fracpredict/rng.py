"""Seeded, worker-count independent random streams.

Each stream is a Philox generator keyed by ``(seed, *keys)``.  Paths are
grouped into fixed-size chunks with their own stream, so path ``i`` is the
same whatever the batch size or the number of workers.
"""
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 256

# stream tags
TRAIN = 1
TEST = 2
INIT = 3
MC = 4
SIM = 5
CONVERGENCE = 6


def stream(seed, *keys) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def worker_count(requested=None) -> int:
    env = os.environ.get("FRACPREDICT_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    n = cap if requested is None else min(int(requested), cap)
    return max(1, n)


def chunked(n_rows, fn, seed, keys=(), workers=None):
    """Evaluate ``fn(rng, n)`` per chunk of rows and stack the results.

    ``fn`` must return an array with ``n`` leading rows.
    """
    starts = list(range(0, n_rows, CHUNK))

    def run(c):
        start = starts[c]
        n = min(CHUNK, n_rows - start)
        return fn(stream(seed, *keys, c), n)

    n_workers = min(worker_count(workers), len(starts))
    if n_workers <= 1:
        parts = [run(c) for c in range(len(starts))]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    return np.concatenate(parts, axis=0)
