"""Deterministic random sources.

All randomness in the package flows through :class:`SeededRng`, a thin
wrapper around numpy's counter-based Philox generator.  Streams can be
split with :meth:`derive`, which mixes arbitrary labels into a child
seed, so draws for one purpose (say, the negatives of one loss term)
never depend on how many draws happened elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    if isinstance(label, str):
        digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"rng labels must be int or str, got {type(label).__name__}")


class SeededRng:
    """Counter-based RNG: identical seed and call sequence give identical draws."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, *labels) -> "SeededRng":
        """Child generator whose seed mixes this seed with the labels."""
        state = self.seed
        for label in labels:
            state = _splitmix64(state ^ _label_to_int(label))
        return SeededRng(state)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(size=shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)

    def sample_excluding(self, n: int, k: int, exclude: int) -> np.ndarray:
        """k distinct draws from range(n) that never include ``exclude``."""
        idx = self._gen.choice(n - 1, size=k, replace=False)
        return idx + (idx >= exclude)

    def weighted_sample_without_replacement(self, n: int, k: int, probs: np.ndarray) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False, p=probs)
