"""Deterministic pseudo-random number generator.

splitmix64 is used to expand a single u64 seed into the xoshiro256**
state, and xoshiro256** drives everything downstream (synthetic data,
parameter init, shuffles).  Both algorithms are fixed by test vectors so
that identical seeds give identical streams on every platform; Python's
``random`` and numpy's generators are deliberately not used anywhere
randomness affects an artifact.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** stream seeded via splitmix64 from a single u64."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        s = self.seed
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        self._s = state

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randrange() requires n > 0")
        threshold = (1 << 64) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def randint(self, lo: int, hi: int) -> int:
        """Integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.randrange(hi - lo + 1)

    def choice(self, seq):
        if not seq:
            raise ValueError("choice() on empty sequence")
        return seq[self.randrange(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self, stream: int) -> "Rng":
        """Child generator with a seed folded from (seed, stream).

        Used for per-image generation so images are independent of
        generation order.
        """
        _, mixed = splitmix64((self.seed ^ (stream * _GOLDEN)) & MASK64)
        return Rng(mixed)


def splitmix64_array(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Vectorized splitmix64 outputs for counters offset..offset+count.

    The i-th value equals the (i+1)-th output of a scalar splitmix64
    stream started at ``seed``; used for bulk fills (parameter init,
    image noise) where a per-value Python loop would be too slow.
    """
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def uniform_array(seed: int, count: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """float32 uniforms in [lo, hi) from the vectorized splitmix64 stream."""
    bits = splitmix64_array(seed, count)
    u = (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return (lo + (hi - lo) * u).astype(np.float32)


def fold_seed(seed: int, name: str) -> int:
    """Stable per-name stream seed: FNV-1a of the name mixed into seed."""
    h = 0xCBF29CE484222325
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    _, mixed = splitmix64((seed ^ h) & MASK64)
    return mixed
