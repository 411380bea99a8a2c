"""Seeded random streams and the samplers built on them.

Streams are Philox (counter-based) generators keyed by a root seed plus a path
of sub-stream names, so ``Rng(7).child("edge").child(12)`` is reproducible no
matter what else has been drawn from sibling streams.
"""
from __future__ import annotations

import zlib

import numpy as np

_TINY = np.finfo(np.float64).tiny


def _key(part: int | str) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode())


class Rng:
    def __init__(self, seed: int, path: tuple = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_key(p) for p in self.path))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, name: int | str) -> "Rng":
        return Rng(self.seed, self.path + (name,))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"

    def uniform_open(self, shape=()) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        u = self.gen.random(shape)
        return np.where(u == 0.0, _TINY, u)

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size=shape)

    def integers(self, high: int, shape=()) -> np.ndarray:
        return self.gen.integers(0, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)


def gumbel_from_uniform(u) -> np.ndarray:
    return -np.log(-np.log(np.asarray(u, dtype=np.float64)))


def sample_gumbel(rng: Rng, shape) -> np.ndarray:
    return gumbel_from_uniform(rng.uniform_open(shape))


def sample_dirichlet(rng: Rng, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    if eta.ndim != 1 or eta.size == 0 or np.any(eta <= 0) or not np.all(np.isfinite(eta)):
        raise ValueError(f"Dirichlet concentration must be positive and finite, got {eta}")
    r = rng.gen.dirichlet(eta)
    return r / r.sum()
