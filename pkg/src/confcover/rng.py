"""Random streams.

Every replica owns one ``numpy.random.Generator`` backed by Philox, seeded
with ``SeedSequence(seed, spawn_key=(tag, replica_id))``.  The stream thus
depends only on the master seed, on a fixed integer tag naming the kind of
simulation, and on the replica number; never on scheduling or worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

TAGS = {
    "walk": 1,
    "stationary": 2,
    "segment": 3,
    "escape": 4,
    "trace": 5,
    "levels": 6,
    "kernel": 7,
    "feynman_kac": 8,
    "occupation": 9,
    "probe": 10,
    "entrance": 11,
}


def stream(seed: int, tag: str | int, replica_id: int = 0) -> np.random.Generator:
    """Generator for ``(seed, tag, replica_id)``."""
    t = TAGS[tag] if isinstance(tag, str) else int(tag)
    ss = np.random.SeedSequence(int(seed), spawn_key=(t, int(replica_id)))
    return np.random.Generator(np.random.Philox(ss))


def run_replicas(fn, seed, tag, replicas, threads=1):
    """Evaluate ``fn(rng, replica_id)`` for each replica; results in replica order.

    ``fn`` should spend its time in ``nogil`` compiled code for threads to help.
    """
    ids = range(int(replicas))

    def task(i):
        return fn(stream(seed, tag, i), i)

    if threads is None or threads <= 1:
        return [task(i) for i in ids]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(task, ids))
