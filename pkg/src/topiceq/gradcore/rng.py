"""Seeded random source used everywhere randomness is needed.

The generator is a splitmix64 stream: a 64-bit counter state advanced by the
golden-gamma constant, with the usual xor-shift/multiply output mix.  The
same seed always yields the same stream, on any platform, which is what the
bitwise-determinism guarantees of training and evaluation rest on.

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

Uniform doubles take the top 53 bits (`out >> 11` scaled by 2^-53), normals
come from Box-Muller on uniform pairs.
"""

from __future__ import annotations

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1
_INV_2_53 = 2.0**-53


class Rng:
    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def _block(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs, vectorized."""
        start = self._state
        self._state = (start + n * _GAMMA) & _MASK
        z = np.uint64(start) + np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self._block(1)[0])

    def split(self) -> "Rng":
        """Independent child stream derived from this one."""
        return Rng(self.next_u64())

    def uniform(self, shape=None) -> np.ndarray | float:
        """I.i.d. doubles in [0, 1)."""
        if shape is None:
            return float(self._block(1)[0] >> np.uint64(11)) * _INV_2_53
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._block(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def normal(self, shape=None) -> np.ndarray | float:
        """I.i.d. standard normals via Box-Muller."""
        scalar = shape is None
        shape = (1,) if scalar else ((shape,) if isinstance(shape, int) else tuple(shape))
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        # 1 - u1 lies in (0, 1], so the log is finite.
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        ang = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n].reshape(shape)
        return float(z[0]) if scalar else z

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return min(int(self.uniform() * n), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def categorical(self, probs: np.ndarray) -> int:
        """Draw an index from a 1-D probability vector."""
        cdf = np.cumsum(probs)
        u = self.uniform() * cdf[-1]
        return min(int(np.searchsorted(cdf, u, side="right")), len(probs) - 1)

    def categorical_rows(self, probs: np.ndarray) -> np.ndarray:
        """Draw one index per row of a (B, V) probability matrix."""
        cdf = np.cumsum(probs, axis=1)
        u = self.uniform(probs.shape[0]) * cdf[:, -1]
        ids = np.empty(probs.shape[0], dtype=np.int64)
        for b in range(probs.shape[0]):
            ids[b] = min(int(np.searchsorted(cdf[b], u[b], side="right")), probs.shape[1] - 1)
        return ids
