"""Deterministic seed derivation for independent random streams.

Every stage of a run gets its own seed from a master seed plus string labels,
hashed together, so adding or removing one stage never shifts the randomness
of another.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Stable 63-bit seed from a master seed and labels."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode("ascii"))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") >> 1


def derived_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
