"""Named, order-independent random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(master_seed: int, *key) -> np.random.Generator:
    """Generator for ``(master_seed, *key)``; string key parts are hashed stably."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *(_word(k) for k in key)]))
