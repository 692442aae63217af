"""Portable counter-based random streams (SplitMix64).

Corruption draws go through this generator rather than numpy so that a
(seed, sample index) pair yields the same decisions on every platform and
numpy version.  Streams are derived per sample, so corrupting samples in
any order or in parallel gives identical output.
"""
from __future__ import annotations

ALGORITHM = "splitmix64"

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return _mix(self.state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi] (multiply-shift reduction)."""
        span = hi - lo + 1
        if span <= 0:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + ((self.next_u64() * span) >> 64)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold integer keys into a seed; distinct key tuples give unrelated streams."""
    state = int(seed) & _MASK
    for key in keys:
        state = _mix((state ^ _mix((int(key) + _GAMMA) & _MASK)) & _MASK)
    return state


def stream(seed: int, *keys: int) -> SplitMix64:
    return SplitMix64(derive_seed(seed, *keys))
