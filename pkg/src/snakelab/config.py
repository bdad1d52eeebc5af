"""Acceptance thresholds and random stream management.

Every Monte Carlo experiment is keyed by a master seed and a replica index.
The pair is hashed by ``numpy.random.SeedSequence`` into a Philox key, so a
replica's stream does not depend on how many other replicas run or in which
order (or on how many threads execute them).
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# Default pass/fail thresholds. Distributional equality tests pass when the
# p-value exceeds P_MIN; moment matches pass within SE_MOMENT standard errors;
# asymptotic constants pass within REL_ASYMPTOTIC relative error.
THRESHOLDS = {
    "p_min": 0.01,
    "se_moment": 4.0,
    "se_tight": 3.0,
    "rel_asymptotic": 0.05,
}

DEFAULT_SEED = 20240611


def replica_rng(seed, replica=0, stream=0):
    """Independent generator for ``(seed, replica, stream)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replica), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def parallel_map(fn, items, threads=1):
    """Order-preserving map; results are identical for any thread count."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
