"""Reproducible random streams.

Every stream is a Philox4x64-10 counter-based generator (the Random123
algorithm, as implemented by ``numpy.random.Philox``) with

* key     = (seed, sample_index) as two 64-bit words,
* counter = (0, 0, 0, purpose) as four 64-bit words,

so each (seed, sample, purpose) triple owns an independent, seekable stream of
raw 64-bit outputs. Raw words are turned into numbers with fixed, portable
rules so the streams can be reproduced bit-exactly in any language:

* uniform double in [0, 1):  ``(x >> 11) * 2**-53``
* uniform double in (0, 1]:  ``((x >> 11) + 1) * 2**-53``
* standard normal: Box-Muller on consecutive pairs ``(x1, x2)``,
  giving ``sqrt(-2 ln u1) * cos(2 pi u2)`` then ``sqrt(-2 ln u1) * sin(2 pi u2)``,
  with ``u1`` in (0, 1] and ``u2`` in [0, 1).
  (Bit-exactness here additionally depends on the platform's ``log``/``cos``.)
"""

import numpy as np

MASK64 = (1 << 64) - 1
TWO_M53 = 2.0 ** -53

# purpose words
GEOMETRY = 1
TEXTURE = 2
NOISE = 3
OUTLIER = 4
POINTS = 5


class Stream:
    def __init__(self, seed, index=0, purpose=0):
        key = np.array([int(seed) & MASK64, int(index) & MASK64], dtype=np.uint64)
        counter = np.array([0, 0, 0, int(purpose) & MASK64], dtype=np.uint64)
        self._gen = np.random.Philox(key=key, counter=counter)
        self.seed, self.index, self.purpose = seed, index, purpose

    def raw(self, n):
        return self._gen.random_raw(int(n))

    def uniform(self, n=None, low=0.0, high=1.0):
        k = 1 if n is None else n
        u = (self.raw(k) >> np.uint64(11)).astype(np.float64) * TWO_M53
        u = low + (high - low) * u
        return float(u[0]) if n is None else u

    def normal(self, n):
        m = (int(n) + 1) // 2
        x = self.raw(2 * m)
        u1 = ((x[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * TWO_M53
        u2 = (x[1::2] >> np.uint64(11)).astype(np.float64) * TWO_M53
        rad = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = rad * np.cos(ang)
        z[1::2] = rad * np.sin(ang)
        return z[: int(n)]

    def integers(self, low, high, n=None):
        """Uniform integers in ``[low, high)`` via ``floor(u * span)``."""
        span = int(high) - int(low)
        if span <= 0:
            raise ValueError("empty range")
        u = self.uniform(1 if n is None else n)
        v = low + np.minimum(np.floor(u * span).astype(np.int64), span - 1)
        return int(v[0]) if n is None else v
