"""Seed-splitting helpers.

Every random draw in the package comes from a generator keyed by a master
seed plus a tuple of stream identifiers (replication index, resample index,
graph role, ...). Streams with different keys are statistically independent,
so results do not depend on the order or process in which tasks run.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream identifiers must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int | None, *keys) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, *keys)``."""
    seed = 0 if seed is None else seed
    ss = np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int | None, *keys) -> int:
    """Derive a plain integer seed for ``(seed, *keys)``."""
    seed = 0 if seed is None else seed
    ss = np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
