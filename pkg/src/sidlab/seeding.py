"""Seed derivation and order-independent replica execution."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

MASK64 = (1 << 64) - 1
WORKERS_ENV = "SIDLAB_WORKERS"


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer; a bijection on 64-bit integers."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _tag_prefix(master_seed: int, experiment_tag: str) -> int:
    h = splitmix64(int(master_seed) & MASK64)
    raw = experiment_tag.encode("utf-8")
    h = splitmix64(h ^ len(raw))
    for i in range(0, len(raw), 8):
        h = splitmix64(h ^ int.from_bytes(raw[i:i + 8], "little"))
    return h


def derive_seed(master_seed: int, experiment_tag: str, replica_index: int) -> int:
    """64-bit seed for one replica of one experiment.

    The replica index enters through a final bijective mix, so distinct
    indices under the same ``(master_seed, experiment_tag)`` never collide.
    """
    return splitmix64(_tag_prefix(master_seed, experiment_tag) ^ (int(replica_index) & MASK64))


def derive_seeds(master_seed: int, experiment_tag: str, indices) -> np.ndarray:
    """Vectorised :func:`derive_seed` over an array of replica indices."""
    idx = np.asarray(indices, dtype=np.uint64)
    z = idx ^ np.uint64(_tag_prefix(master_seed, experiment_tag))
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def map_replicas(fn, n_replicas: int, workers: int | None = None) -> list:
    """Evaluate ``fn(i)`` for ``i in range(n_replicas)``; results ordered by index.

    Compiled kernels release the GIL, so threads give real parallelism for
    the heavy loops. The result never depends on ``workers``.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or n_replicas <= 1:
        return [fn(i) for i in range(n_replicas)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_replicas)))
