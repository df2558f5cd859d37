"""Portable deterministic random streams.

Built on the Philox counter-based generator: a given (seed, stream) pair
yields the same sequence on every platform, and distinct streams are
statistically independent, so generation parallelizes without shared state.
"""

import numpy as np


class RngStream:
    """A named, reproducible random stream."""

    algorithm = "philox4x64"

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, substream):
        """Derived stream, distinct per (parent stream, substream).

        Parent streams occupy the low 56 bits of the key, leaving the top
        byte for a substream tag, so children of distinct parents never
        collide (for substreams < 256 and parent streams < 2^56).
        """
        sub = int(substream)
        if not 0 <= sub < 256:
            raise ValueError("substream must be in [0, 256)")
        if self.stream >> 56:
            raise ValueError("parent stream too large to derive children")
        return RngStream(self.seed, (sub << 56) | self.stream)

    def __getattr__(self, name):
        # Delegate distribution methods (uniform, normal, integers, ...)
        return getattr(self._gen, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"
