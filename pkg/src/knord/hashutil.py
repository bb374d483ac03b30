"""Stable hashing helpers shared by the deterministic stub backends."""

import hashlib

import numpy as np


def stable_digest(*parts) -> int:
    """64-bit digest of the given parts, stable across processes and runs."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def unit_score(seed, token) -> float:
    """Deterministic pseudo-score in [0, 1) for a token under a seed."""
    return stable_digest(seed, token) / 2.0**64


def token_rng(seed, token) -> np.random.Generator:
    """Generator seeded from (seed, token); same token always gets the same stream."""
    return np.random.default_rng(stable_digest(seed, token))
