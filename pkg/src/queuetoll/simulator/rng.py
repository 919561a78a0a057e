"""Independent, reproducible random streams keyed by (seed, replication, class, purpose).

Each key maps to its own Philox counter-based generator, so streams never
overlap and a replication can be regenerated without replaying the others.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {"arrivals": 0, "routing": 1, "sizes": 2}


def stream(seed: int, replication: int, cls: int, purpose: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replication, cls, PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))
