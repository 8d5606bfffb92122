"""Seeded random streams.

All randomness goes through numpy's Philox-4x64 counter-based generator.
Independent streams are derived by hashing a base seed with string/int keys,
so ``stream(seed, "train", 3)`` is the same sequence on every run.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    h = hashlib.sha256(str(int(seed)).encode())
    for k in keys:
        h.update(b"/")
        h.update(str(k).encode())
    return int.from_bytes(h.digest()[:8], "little")


def stream(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, *keys)))
