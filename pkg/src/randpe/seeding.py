"""Stable seed derivation and the package's random generator.

``derive_seed(*parts)`` hashes its integer arguments (each encoded as a
signed 8-byte little-endian word) with BLAKE2b and returns the first 8 bytes
of the digest as an unsigned 64-bit integer. ``make_rng(seed)`` feeds that
integer through ``numpy.random.SeedSequence`` into a Philox counter-based
generator. Both mappings are fixed and do not depend on scheduling, so
ensemble members can be run in any order or in parallel.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "make_rng"]

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(int(p & _MASK64).to_bytes(8, "little", signed=False))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & _MASK64)))
