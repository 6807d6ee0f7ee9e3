"""Seeded random streams. All randomness in the package flows through :class:`Rng`."""

from __future__ import annotations

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor


class Rng:
    """A reproducible stream over numpy's PCG64 bit generator."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, scale: float = 1.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
        return (self._gen.standard_normal(size=tuple(shape)) * scale).astype(dtype)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=tuple(shape))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def child(self, key: int) -> "Rng":
        """Independent stream derived deterministically from this seed and ``key``."""
        return Rng(self.seed * 1_000_003 + int(key) + 1)


def gaussian_sample(rng: Rng, shape, dtype=DEFAULT_DTYPE) -> Tensor:
    """I.i.d. standard normal tensor of the requested shape."""
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ValueError("shape must be nonempty")
    return Tensor(rng.normal(shape, dtype=dtype))
