"""Deterministic seeded random streams with derived substreams.

Built on numpy's counter-based Philox generator so that identical seeds
replay identical draw sequences across platforms. Substreams are derived
from (seed, tag path) rather than by consuming the parent stream, so
concurrent consumers (one model instance, one epoch, ...) can each hold an
independent stream without coordinating draw order.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import UsageError


def _tag_value(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    if isinstance(tag, str):
        digest = hashlib.blake2s(tag.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big")
    raise UsageError(f"substream tags must be int or str, got {type(tag).__name__}")


class RngStream:
    """One reproducible stream of random draws.

    `substream(*tags)` derives an independent child stream keyed by the tag
    path; the same (seed, path) always yields the same draws.
    """

    def __init__(self, seed, _path=()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise UsageError("seed must fit in an unsigned 64-bit integer")
        self.seed = seed
        self.path = tuple(_path)
        self._gen = self._make_generator()

    def _make_generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))

    def reset(self) -> None:
        """Rewind the stream to its initial state."""
        self._gen = self._make_generator()

    def substream(self, *tags) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(_tag_value(t) for t in tags))

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"
