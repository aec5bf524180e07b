"""Deterministic 64-bit seed derivation for experiment fan-out."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, index: int, tag: str) -> int:
    """Stateless mix of (master seed, trial index, purpose tag) -> 64-bit seed.

    Uses keyed BLAKE2b so distinct tags and indices give independent streams.
    """
    if not 0 <= master < 2**64:
        raise ValueError("master seed must fit in 64 bits")
    if not 0 <= index < 2**64:
        raise ValueError("index must fit in 64 bits")
    h = hashlib.blake2b(digest_size=8)
    h.update(master.to_bytes(8, "little"))
    h.update(index.to_bytes(8, "little"))
    h.update(tag.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")
