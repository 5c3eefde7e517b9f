"""Counter-based seed derivation.

Every random stream in the package is keyed by ``(seed, label...)`` through
the SplitMix64 finalizer, so the draws a component sees never depend on the
order in which other components consumed randomness or on how work is laid
out across workers.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output function on a Python int, modulo 2**64."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & MASK64
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(seed: int, *labels) -> int:
    """Fold labels (ints or strings) into ``seed`` and return a 64-bit seed."""
    z = mix64(int(seed) & MASK64)
    for label in labels:
        z = mix64(z ^ _label_to_int(label))
    return z


def generator(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *labels)))
