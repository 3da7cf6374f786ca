"""Seeded random streams.

Every randomized routine in the package takes an explicit integer seed.
Streams come from numpy's PCG64 bit generator, whose output sequence is
fixed across platforms for a given ``SeedSequence``.  Child streams are
derived by hashing ``(seed, *keys)`` through ``SeedSequence.spawn_key``,
so draw ``j`` of an estimator depends only on ``(seed, j)`` and never on
execution order.
"""
from __future__ import annotations

import numpy as np

#: Euler-Mascheroni constant to 20 significant digits.
EULER_GAMMA = 0.57721566490153286061


def _seq(seed: int, keys) -> np.random.SeedSequence:
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the child stream ``hash(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(_seq(seed, keys)))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed for the child stream ``hash(seed, *keys)``."""
    state = _seq(seed, keys).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the open interval (0, 1).

    ``Generator.random`` covers [0, 1); exact zeros are redrawn so that the
    Gumbel transform never produces an infinite value.
    """
    u = rng.random(size)
    bad = u <= 0.0
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum()))
        bad = u <= 0.0
    return u


def gumbel(rng: np.random.Generator, size) -> np.ndarray:
    """Zero-mean Gumbel draws, ``-c - log(-log U)``."""
    return -EULER_GAMMA - np.log(-np.log(open_uniform(rng, size)))
