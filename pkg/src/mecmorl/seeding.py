"""Named RNG stream derivation.

All randomness in a run flows from one root seed. Substreams are derived
from (root, name, name, ...) so that e.g. episode geometry, task arrivals
and channel fades never share a stream, which keeps evaluation episodes
paired across policies even when the policies consume different numbers
of draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def seed_sequence(root_seed: int, *names) -> np.random.SeedSequence:
    """Deterministic SeedSequence for the stream named by ``names``."""
    return np.random.SeedSequence(entropy=int(root_seed),
                                  spawn_key=tuple(_key(n) for n in names))


def derive_rng(root_seed: int, *names) -> np.random.Generator:
    """Independent Generator for the stream named by ``names``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, *names)))
