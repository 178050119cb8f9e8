"""Portable seeded PRNG: xoshiro256** with splitmix64 seeding.

All randomness in the toolkit flows through this generator so that
identical seeds give bit-identical results on every platform. Constants
are the published reference constants:

  splitmix64:  increment 0x9E3779B97F4A7C15,
               mix 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB
  xoshiro256**: scrambler rotl(s1 * 5, 7) * 9, shifts 17 / 45
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64_stream(seed: int, n: int) -> list[int]:
    """First *n* outputs of splitmix64 starting from *seed*."""
    out = []
    s = seed & MASK64
    for _ in range(n):
        s = (s + 0x9E3779B97F4A7C15) & MASK64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


class Xoshiro256StarStar:
    """xoshiro256** seeded by expanding a 64-bit seed with splitmix64."""

    def __init__(self, seed: int):
        state = splitmix64_stream(seed, 4)
        if not any(state):  # all-zero state is the one forbidden fixpoint
            state = splitmix64_stream(0x9E3779B97F4A7C15, 4)
        self._s = state

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_uint64() >> 11) * 2.0**-53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, n: int) -> int:
        """Integer in [0, n) by rejection sampling (unbiased)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = MASK64 - (MASK64 + 1) % n
        while True:
            x = self.next_uint64()
            if x <= limit:
                return x % n

    def choice(self, seq):
        return seq[self.randint(len(seq))]


def fnv1a_64(data: str) -> int:
    """64-bit FNV-1a hash of a UTF-8 string (stable token hashing)."""
    h = 0xCBF29CE484222325
    for b in data.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & MASK64
    return h
