"""Seeded splitmix64 streams.

The generator is pinned (not the stdlib Mersenne Twister) so that identical
seeds reproduce identical synthetic worlds byte for byte, independent of
platform or interpreter. Floats use the top-53-bits-to-unit-interval
convention: ``(next_u64() >> 11) * 2**-53``.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """The splitmix64 output permutation."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def substream_seed(seed: int, domain: int, index: int = 0) -> int:
    """Derive an independent stream seed for (domain, index).

    Domains separate world fixtures (towers, graph, ...) from subscriber
    streams; within the subscriber domain, ``index`` is the subscriber number.
    """
    s = (seed ^ ((domain & _MASK) * 0xD1B54A32D192ED03)) & _MASK
    s = (s + ((index & _MASK) * _GOLDEN)) & _MASK
    return mix64(s)


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) via multiply-shift (deterministic, tiny bias)."""
        return (self.next_u64() * n) >> 64

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def pick_weighted(self, cumulative, items):
        """Pick items[i] for the first cumulative[i] exceeding a uniform draw."""
        u = self.random() * cumulative[-1]
        for i, c in enumerate(cumulative):
            if u < c:
                return items[i]
        return items[-1]

    def gauss(self) -> float:
        """One standard normal draw (Box-Muller, two uniforms consumed)."""
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # (0, 1], avoids log(0)
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def geometric(self, p: float) -> int:
        """Number of failures before first success, p in (0, 1]."""
        if p >= 1.0:
            return 0
        k = 0
        while self.random() >= p:
            k += 1
            if k > 10_000:  # guard against p ~ 0 runaway
                break
        return k

    def poisson(self, lam: float) -> int:
        """Knuth product method; adequate for the small rates used here."""
        if lam <= 0.0:
            return 0
        limit = math.exp(-lam)
        k = 0
        prod = self.random()
        while prod > limit:
            k += 1
            prod *= self.random()
        return k
