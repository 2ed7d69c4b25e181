"""Counter-based random streams with explicit derivation.

Every source of randomness in the package flows through `stream`, keyed by a
64-bit seed plus integer labels (node id, step, sample index, ...). Streams are
mutually independent for distinct keys and reproducible across runs and
platforms because Philox is a pure counter-based generator.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _mix(z: int) -> int:
    # splitmix64 finalizer
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def fold(seed: int, *labels: int) -> int:
    """Derive a new 64-bit seed from `seed` and integer labels."""
    z = seed & _MASK
    for lab in labels:
        z = _mix((z + 0x9E3779B97F4A7C15 + (lab & _MASK)) & _MASK)
    return z


def stream(seed: int, *labels: int) -> np.random.Generator:
    """Independent generator for (seed, labels)."""
    return np.random.Generator(np.random.Philox(key=fold(seed, *labels)))
