"""Deterministic random number generation.

Every stochastic choice in the engine flows through :class:`Rng`, a
SplitMix64 generator implemented here so that identical seeds produce
identical streams on every platform and library version. The algorithm
name is recorded in trace headers.
"""

from __future__ import annotations

from typing import MutableSequence

_MASK64 = (1 << 64) - 1

ALGORITHM = "splitmix64"


class Rng:
    """SplitMix64 stream with helpers for the operations the engine needs."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % n

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice_index(self, probabilities: list[float]) -> int:
        """Sample an index from a probability vector by inverse CDF.

        The vector is renormalized by its own sum, so small rounding
        deficits cannot push the draw out of range.
        """
        total = sum(probabilities)
        if not total > 0.0:
            raise ValueError("probability vector must have positive mass")
        u = self.random() * total
        acc = 0.0
        for i, p in enumerate(probabilities):
            acc += p
            if u < acc:
                return i
        return len(probabilities) - 1
