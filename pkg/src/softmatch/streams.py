"""Splittable, counter-based random streams.

All randomness flows from one user seed; independent substreams are derived
from (seed, *key) through SeedSequence spawn keys on top of the Philox
counter-based generator. Per-trial streams make probe results reproducible
bit for bit and independent of any execution order.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
