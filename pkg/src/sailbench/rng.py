"""splitmix64 pseudo-random stream.

Everything in the harness that needs randomness (dataset generators, weight
initialization, shuffling) draws from this one generator so that a run is
reproducible bit-for-bit from its seeds.  splitmix64 is tiny, has no global
state, and is trivial to re-implement in any language that has 64-bit
integers, which matters for external solver plugins that want to agree with
the host on generated data.
"""

from __future__ import annotations

import hashlib
import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 output function; doubles as a strong 64-bit mixer."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stable_hash64(text: str | bytes) -> int:
    """Platform-stable 64-bit hash (first 8 bytes of sha256, big-endian)."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big")


def derive_seed(*parts: int | str) -> int:
    """Fold several seed components into one 64-bit child seed."""
    acc = 0
    for part in parts:
        word = part & _MASK64 if isinstance(part, int) else stable_hash64(part)
        acc = mix64(acc ^ (word + _GOLDEN))
    return acc


class SplitMix64:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def uniform(self) -> float:
        """Uniform float64 in [0, 1), using the 53 high bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def normal(self) -> float:
        """Standard normal via Box-Muller; always consumes two uniforms."""
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randint(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def split(self, label: int | str) -> "SplitMix64":
        """Child stream keyed by a label; independent of draws on self."""
        return SplitMix64(derive_seed(self._state, label))
