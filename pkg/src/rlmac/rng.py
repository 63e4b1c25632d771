"""Seeded random streams.

Every stochastic quantity in a run is drawn from a stream keyed by
(master seed, node id, purpose). Adding a node or a new purpose never
perturbs the draws of existing streams.
"""

from __future__ import annotations

import zlib

import numpy as np

NETWORK = -1  # node id used for streams not owned by a single node


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master: int, node: int, purpose: str) -> np.random.Generator:
    """Independent generator for one (node, purpose) pair of a run."""
    # SeedSequence entropy must be non-negative
    entropy = [int(master) & 0xFFFFFFFF, (int(node) + 1) & 0xFFFFFFFF, _purpose_key(purpose)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


class Streams:
    """Lazily created, cached streams for one run."""

    def __init__(self, master: int):
        self.master = int(master)
        self._cache: dict[tuple[int, str], np.random.Generator] = {}

    def get(self, node: int, purpose: str) -> np.random.Generator:
        key = (int(node), purpose)
        gen = self._cache.get(key)
        if gen is None:
            gen = stream(self.master, node, purpose)
            self._cache[key] = gen
        return gen
