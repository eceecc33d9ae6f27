"""Seed derivation.

Every random stream is ``default_rng(SeedSequence([seed, crc32(tag), *index]))``
so runs are reproducible from one top-level seed and independent across
purposes (chains, prediction draws, folds, simulation).
"""

import zlib

import numpy as np


def child_seed(seed: int, tag: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(tag.encode()), *map(int, index)])


def child_rng(seed: int, tag: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, tag, *index))
