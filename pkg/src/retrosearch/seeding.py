"""Seed derivation.  All randomness flows from numpy's PCG64 generator."""

from __future__ import annotations

import numpy as np

GENERATOR = "PCG64"


def derive_seed(root: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for ``(root, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(root) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def generator(root: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root, *keys)))
