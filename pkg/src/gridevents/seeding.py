"""Deterministic derivation of named sub-seeds from one master seed.

Every random decision in the toolkit (generation, splits, weight init,
search) draws from a generator keyed by the master seed plus a name path,
so components can be re-seeded independently and runs reproduce exactly
regardless of call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def subseed(master: int, *names: object) -> int:
    """Derive a 64-bit seed from a master seed and a name path."""
    key = repr((int(master),) + tuple(str(n) for n in names)).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def generator(master: int, *names: object) -> np.random.Generator:
    """Seeded numpy generator for the given name path."""
    return np.random.default_rng(subseed(master, *names))
