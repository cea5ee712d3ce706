"""Seeded randomness: tagged stream splitting plus Beta/Gamma sampling.

Streams are backed by numpy's PCG64 (a permuted-congruential generator).
A stream is identified by a 64-bit seed plus a path of string tags, so
``rng.split("shuffle")`` is reproducible and statistically independent of
its parent and of any sibling tag. Determinism is guaranteed within one
build of this package, not across unrelated implementations.

Gamma draws use the Marsaglia-Tsang squeeze method (with the u^(1/a) boost
for shape < 1); Beta draws are the classic ratio g1 / (g1 + g2) of two
Gamma variates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters of a Beta distribution; both must be positive."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise ValueError(f"Beta shape parameters must be positive, got {self}")

    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def __str__(self) -> str:
        return f"Beta({self.alpha:g},{self.beta:g})"


def _tag_key(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "big")


class SeededRng:
    """Deterministic stream addressed by (seed, tag path)."""

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(_path)
        ss = np.random.SeedSequence(entropy=[self.seed & (2**64 - 1), *self._path])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def split(self, tag: str) -> "SeededRng":
        """Independent child stream; the same tag always yields the same child."""
        return SeededRng(self.seed, self._path + (_tag_key(tag),))

    def uniform(self) -> float:
        return float(self._gen.random())

    def normal(self) -> float:
        return float(self._gen.standard_normal())

    def normal_array(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, depth={len(self._path)})"


def sample_uniform(rng: SeededRng) -> float:
    """One draw in [0, 1), advancing the stream."""
    return rng.uniform()


def sample_gamma(shape: float, rng: SeededRng) -> float:
    """Draw from Gamma(shape, scale=1) via Marsaglia-Tsang."""
    shape = float(shape)
    if not shape > 0.0:
        raise ValueError(f"gamma shape must be positive, got {shape}")
    if shape < 1.0:
        u = rng.uniform()
        while u == 0.0:
            u = rng.uniform()
        return sample_gamma(shape + 1.0, rng) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        x = rng.normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.uniform()
        if u < 1.0 - 0.0331 * x**4:
            return d * v
        if u > 0.0 and np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v)):
            return d * v


def sample_beta(params: BetaParams, rng: SeededRng) -> float:
    """Draw from Beta(alpha, beta) as g1/(g1+g2); strictly inside (0, 1)."""
    while True:
        g1 = sample_gamma(params.alpha, rng)
        g2 = sample_gamma(params.beta, rng)
        r = g1 / (g1 + g2)
        if 0.0 < r < 1.0:
            return r
