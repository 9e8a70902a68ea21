"""Counter-based deterministic random draws.

Every draw is a pure function of its key parts (hashed with SHA-256), so
values never depend on call order or call count. This is what makes
concurrent decodes and partial tree exploration bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["key_bytes", "unit_float", "uniform", "generator"]


def key_bytes(*parts) -> bytes:
    return "|".join(str(p) for p in parts).encode("utf-8")


def unit_float(*parts) -> float:
    """Deterministic float in [0, 1) keyed by the given parts."""
    digest = hashlib.sha256(key_bytes(*parts)).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def uniform(lo: float, hi: float, *parts) -> float:
    return lo + (hi - lo) * unit_float(*parts)


def generator(*parts) -> np.random.Generator:
    """A numpy Generator seeded purely from the key parts."""
    digest = hashlib.sha256(key_bytes(*parts)).digest()
    seed = int.from_bytes(digest[:16], "big")
    return np.random.default_rng(seed)
