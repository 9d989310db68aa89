"""Seedable, splittable random streams backed by the Philox counter-based
bit generator.

Every stochastic choice in the toolkit (initialization, dropout, negative
sampling, shuffling) draws from a stream identified by a string label, so
any one of them can be replayed in isolation by recreating the hub with
the same seed and re-requesting the label.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    """Stable 128-bit entropy derived from a stream label."""
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:16], "little")


class RngHub:
    """Factory and cache for labeled random streams.

    `stream(label)` returns the same generator object on repeated calls,
    so successive draws from one label advance its state; two hubs built
    with the same seed replay identical per-label sequences.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, label: str) -> np.random.Generator:
        gen = self._streams.get(label)
        if gen is None:
            seq = np.random.SeedSequence(entropy=[self.seed, _label_entropy(label)])
            gen = np.random.Generator(np.random.Philox(seq))
            self._streams[label] = gen
        return gen

    def child(self, label: str) -> "RngHub":
        """Independent hub split off deterministically from this one."""
        return RngHub(self.seed ^ _label_entropy("child:" + label) % (1 << 63))
