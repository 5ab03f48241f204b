"""Deterministic seed fan-out.

``split_seed(seed, label)`` is the first 8 bytes (little-endian) of
BLAKE2b(f"{seed}/{label}"), masked to 63 bits, so every component draws from
its own stream and adding a component never shifts another's randomness.
"""
from __future__ import annotations

import hashlib

import numpy as np


def split_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


def child_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(split_seed(seed, label))
