"""Deterministic random streams: SplitMix64 seeding into xoshiro256**.

Every random choice in the package (synthetic data, parameter init, epoch
shuffling, K-shot sampling) flows from a single 64-bit seed through this
generator, so fixtures and training runs are reproducible bit-for-bit and
re-derivable in any language. Bulk u64 generation goes through the
``xoshiro_fill`` kernel; everything downstream (doubles, normals, shuffles)
is defined on top of that one stream.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels

_MASK = 0xFFFFFFFFFFFFFFFF
_DOUBLE_SCALE = 2.0 ** -53


def splitmix64(x: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (advanced state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h


def derive_seed(seed: int, tag: str) -> int:
    """Derive an independent substream seed for a named purpose."""
    _, out = splitmix64((seed ^ _fnv1a64(tag)) & _MASK)
    return out


class Stream:
    """xoshiro256** stream seeded via four SplitMix64 outputs."""

    def __init__(self, seed: int):
        state = np.empty(4, dtype=np.uint64)
        x = seed & _MASK
        for i in range(4):
            x, out = splitmix64(x)
            state[i] = out
        self._state = state

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        kernels.xoshiro_fill(self._state, out)
        return out

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def doubles(self, n: int) -> np.ndarray:
        """Uniform float64 in [0, 1), 53 bits of entropy each."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE

    def normals(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive double pairs."""
        pairs = (n + 1) // 2
        u = self.doubles(2 * pairs)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def truncated_normals(self, n: int, std: float = 1.0, cut: float = 2.0) -> np.ndarray:
        """Normals rejected outside +/- cut sigma, then scaled by std."""
        out = np.empty(n)
        filled = 0
        while filled < n:
            z = self.normals(n - filled)
            keep = z[np.abs(z) <= cut]
            out[filled:filled + keep.shape[0]] = keep
            filled += keep.shape[0]
        return out * std

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by modulo; bias is negligible for n << 2**64."""
        return self.next_u64() % n

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n)."""
        items = list(range(n))
        for i in range(n - 1):
            j = i + self.randbelow(n - i)
            items[i], items[j] = items[j], items[i]
        return items

    def choose(self, items: list, k: int) -> list:
        """k distinct elements by partial Fisher-Yates, in draw order."""
        pool = list(items)
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
