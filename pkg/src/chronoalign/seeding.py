"""Deterministic seed derivation: one root seed, hashed with purpose tags."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *tags) -> int:
    """Derive a 64-bit sub-seed from a root seed and purpose tags."""
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(root_seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *tags))
