"""Deterministic counter-based random streams.

All randomness goes through Philox keyed by a stable hash of
``(seed, *names)`` so that substreams for different stages or workers
never depend on call order.
"""

import hashlib

import numpy as np


def stream_key(seed: int, *names) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def substream(seed: int, *names) -> np.random.Generator:
    """Generator for the named substream of ``seed``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *names)))
