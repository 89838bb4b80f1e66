"""Platform-independent seed derivation (splitmix64)."""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Seed for stream ``index`` under ``master_seed``.

    Defined as ``splitmix64(splitmix64(master_seed) ^ index)`` on unsigned
    64-bit integers, so the value never depends on the host.
    """
    return splitmix64(splitmix64(master_seed & MASK64) ^ (index & MASK64))
