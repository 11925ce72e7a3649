"""Deterministic RNG stream derivation.

Every sampling operation in the package draws from a stream derived as
hash(master_seed, *tags), so results are independent of scheduling order
when DGPs are processed by parallel workers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(master_seed: int, *tags) -> int:
    """Stable 64-bit key from a master seed and an arbitrary tag tuple.

    Tags may be ints or strings; the same (seed, tags) always yields the
    same key, across processes and platforms.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master_seed).to_bytes(16, "little", signed=True))
    for tag in tags:
        if isinstance(tag, (int, np.integer)):
            h.update(b"i" + int(tag).to_bytes(16, "little", signed=True))
        else:
            raw = str(tag).encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(4, "little") + raw)
    return int.from_bytes(h.digest(), "little")


def derive_rng(master_seed: int, *tags) -> np.random.Generator:
    """Independent ``numpy`` generator for the given (seed, tags) stream."""
    return np.random.default_rng(derive_key(master_seed, *tags))
