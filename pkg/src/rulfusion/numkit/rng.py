"""Seeded random source with a platform-independent stream.

The generator is splitmix64 (Steele, Lea, Flood 2014): a 64-bit counter
advanced by the golden-ratio increment and scrambled by two xor-multiply
rounds.  Everything downstream (uniforms, normals, shuffles) is derived
from that single u64 stream with fixed arithmetic, so a given seed yields
the same draws on every platform.  The first sixteen uniforms for seed 42
are frozen in a golden test.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = (h ^ byte) * 0x100000001B3 & _MASK64
    return h


class SeededRng:
    """splitmix64 stream of uniforms/normals/integers.

    `normal()` is Box-Muller with no spare caching: every call consumes
    exactly two uniforms, which keeps the stream position a pure function
    of the call count.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._state = self.seed

    def derive(self, tag: str) -> "SeededRng":
        """Independent substream keyed by a label (e.g. "init", "dropout")."""
        return SeededRng(_mix64(self.seed ^ _fnv1a(tag)))

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def uniform(self) -> float:
        # Top 53 bits -> double in [0, 1).
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        u1 = 1.0 - self.uniform()  # (0, 1]: keeps log finite
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randint(self, n: int) -> int:
        """Integer in [0, n). Floor-of-uniform; bias is < 2^-53 per draw."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return min(int(self.uniform() * n), n - 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def uniform_array(self, shape: tuple[int, ...]) -> np.ndarray:
        size = int(np.prod(shape)) if shape else 1
        out = np.empty(size, dtype=np.float64)
        for i in range(size):
            out[i] = self.uniform()
        return out.reshape(shape)

    def normal_array(self, shape: tuple[int, ...], std: float = 1.0) -> np.ndarray:
        size = int(np.prod(shape)) if shape else 1
        out = np.empty(size, dtype=np.float64)
        for i in range(size):
            out[i] = self.normal()
        return (out * std).reshape(shape)
