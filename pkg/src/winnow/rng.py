"""Deterministic randomness.

Every random draw in the engine flows from a single project seed through
splitmix64, with the step name mixed in, so any step can be reproduced in
isolation from (seed, step labels) alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _label_hash(label: str) -> int:
    return int.from_bytes(
        hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little"
    )


def derive_seed(root_seed: int, *labels: str) -> int:
    """Derive a 64-bit seed from the root seed and a sequence of step labels."""
    state = root_seed & _MASK
    out = 0
    for label in labels:
        state, out = splitmix64(state ^ _label_hash(label))
    if not labels:
        _, out = splitmix64(state)
    return out


def generator(root_seed: int, *labels: str) -> np.random.Generator:
    """Seeded numpy generator for the step identified by `labels`."""
    return np.random.default_rng(derive_seed(root_seed, *labels))
