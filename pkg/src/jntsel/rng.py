"""Keyed random substreams.

Every random draw in the package comes from a generator identified by
``(seed, *key)``, so results do not depend on evaluation order, chunking
or the number of worker threads.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "STREAM_SPLITS", "STREAM_SIM", "STREAM_BOOT", "STREAM_NULL", "STREAM_PARAM"]

STREAM_SPLITS = 1
STREAM_SIM = 2
STREAM_BOOT = 3
STREAM_NULL = 4
STREAM_PARAM = 5


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 generator for ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
