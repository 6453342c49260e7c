"""xoshiro256** with splitmix64 seeding.

Pure integer arithmetic on 64-bit words, so the stream is identical on every
platform and easy to reproduce in any language:

* seeding: four successive splitmix64 outputs from the integer seed;
* ``next_u64``: the reference xoshiro256** step (Blackman & Vigna);
* ``random``: top 53 bits of ``next_u64`` scaled by ``2**-53``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    __slots__ = ("s",)

    def __init__(self, seed: int):
        x = seed & MASK64
        s = []
        for _ in range(4):
            x = (x + GOLDEN) & MASK64
            s.append(splitmix64_mix(x))
        self.s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0):
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.random()
        return lo + (hi - lo) * out


def derive_seed(master: int, *keys) -> int:
    """Hash a master seed with integer or string keys into a 64-bit seed."""
    h = splitmix64_mix(master & MASK64)
    for k in keys:
        if isinstance(k, str):
            k = int.from_bytes(k.encode("utf-8"), "little")
        h = splitmix64_mix(h ^ (splitmix64_mix(k & MASK64) + GOLDEN))
    return h
