"""Stable, platform-independent hashing used for seeds and toy logits.

Everything here is pure arithmetic on bytes and unsigned 64-bit integers,
so any independent implementation (a test oracle, another language) can
reproduce the values exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)

U64_SCALE = 2.0**64


def hash64(*parts: bytes) -> int:
    """Concatenate ``parts`` and return the first 8 bytes of BLAKE2b as a
    little-endian unsigned integer."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(part)
    return int.from_bytes(h.digest(), "little")


def hash64_text(text: str) -> int:
    return hash64(text.encode("utf-8"))


def splitmix64(x: np.ndarray | int) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 inputs (wrapping)."""
    z = np.asarray(x, dtype=np.uint64) + _SM_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM_MUL1
    z = (z ^ (z >> np.uint64(27))) * _SM_MUL2
    return z ^ (z >> np.uint64(31))


def unit_floats(seed: int, n: int) -> np.ndarray:
    """``n`` floats in [0, 1): splitmix64(seed + i) / 2**64 for i in 0..n-1.

    The formula is part of the public contract of the toy backend; oracles
    recompute it verbatim.
    """
    idx = np.uint64(seed) + np.arange(n, dtype=np.uint64)
    return splitmix64(idx) / U64_SCALE


def normalize_text(text: str) -> str:
    """Canonical form used when hashing condition text: trim + casefold."""
    return text.strip().lower()
