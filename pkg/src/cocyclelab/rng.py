"""Deterministic counter-based random streams.

All Monte-Carlo code draws from Philox generators keyed by (seed, stream
index).  Stream s of seed q is the same bit sequence on every platform and
for every worker layout, so estimates are reproducible for a fixed seed and
identical no matter how the work is sharded.
"""

import numpy as np


def _mix64(a, b):
    # splitmix64-style finalizer on the pair (a, b)
    x = (a ^ (b * 0x9E3779B97F4A7C15)) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


class Streams:
    """Family of independent generators derived from one 64-bit seed."""

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, index):
        key = _mix64(self.seed, int(index))
        return np.random.Generator(np.random.Philox(key=key))

    def spawn(self, tag):
        """Sub-family for a named phase, decoupled from sibling phases."""
        return Streams(_mix64(self.seed, 0xA076_1D64_78BD_642F ^ int(tag)))


def as_streams(rng):
    """Accept either a Streams instance or an integer seed."""
    if isinstance(rng, Streams):
        return rng
    return Streams(int(rng))
