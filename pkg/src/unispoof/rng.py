"""Reproducible random streams built on splitmix64 key derivation.

Every stochastic component (augmentation, rendering, training shuffles)
derives its own child stream from a global 64-bit seed plus string/int
tags, so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output word)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _mix_tag(state: int, tag: int | str) -> int:
    if isinstance(tag, str):
        # FNV-1a over the UTF-8 bytes keeps tags platform independent.
        h = 0xCBF29CE484222325
        for b in tag.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) & _MASK64
        tag_word = h
    else:
        tag_word = tag & _MASK64
    _, out = splitmix64(state ^ tag_word)
    return out


def derive_seed(seed: int, *tags: int | str) -> int:
    """Derive a child 64-bit seed from a parent seed and a tag path."""
    state = seed & _MASK64
    for tag in tags:
        state = _mix_tag(state, tag)
    return state


class SeedStream:
    """A named, order-independent random stream.

    Wraps a counter-based generator (Philox) keyed by a splitmix64-derived
    seed.  `child(*tags)` splits off an independent stream; splitting is a
    pure function of (seed, tags), so parallel schedules cannot change
    results.
    """

    def __init__(self, seed: int, *tags: int | str):
        self.seed = derive_seed(seed, *tags) if tags else (seed & _MASK64)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, *tags: int | str) -> "SeedStream":
        return SeedStream(derive_seed(self.seed, "child", *tags))

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        return self._gen.uniform(lo, hi, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size=size)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def choice(self, options, size=None, replace=True):
        return self._gen.choice(options, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, seq: list) -> None:
        self._gen.shuffle(seq)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen
