"""Counter-based splittable random streams.

Every stochastic component draws from a Philox generator keyed by
``(seed, purpose-tag)`` so that data generation, initialization and shuffling
are independent streams and sweeps stay deterministic regardless of ordering.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream"]


def stream(seed: int, tag: str) -> np.random.Generator:
    """Deterministic generator for a ``(seed, tag)`` pair."""
    digest = hashlib.blake2b(f"{int(seed)}:{tag}".encode("utf-8"), digest_size=16).digest()
    key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.Philox(key=key))
