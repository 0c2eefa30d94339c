"""Seedable, splittable random streams.

Every stochastic step in the package draws from a Philox4x64 counter-based
generator keyed by ``numpy.random.SeedSequence(entropy=seed, spawn_key=path)``.
Philox is splittable: distinct ``path`` tuples give statistically independent
streams from the same user-facing seed, so per-class work (splitting,
clustering, subsampling) can run in any order, or concurrently, and still
reproduce bit-identical results.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed, *path)``.

    The same arguments always yield a generator in the same initial state.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
