"""Keyed random streams.

Every stochastic draw in a run comes from a generator keyed by
``(seed, domain, k, worker)``, so a given draw does not depend on how many
other draws happened before it. Runs that share keys (e.g. a single-worker
distributed run and a centrally compressed run) see identical randomness.
"""
from __future__ import annotations

import numpy as np

QUANTIZER = 1
DELAY = 2
PROBE = 3


def stream(seed: int, domain: int, k: int = 0, worker: int = 0) -> np.random.Generator:
    if min(seed, domain, k, worker) < 0:
        raise ValueError("stream keys must be nonnegative")
    ss = np.random.SeedSequence(seed, spawn_key=(domain, k, worker))
    return np.random.Generator(np.random.PCG64(ss))
