"""Counter-based derivation of per-component RNG streams from a master seed.

Each component gets its own stream keyed by (master seed, crc32(name)), so
adding or removing a component never perturbs the streams of the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(master_seed: int, component: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), zlib.crc32(component.encode("utf-8"))])


def rng_for(master_seed: int, component: str) -> np.random.Generator:
    """Independent Generator for a named component under a master seed."""
    return np.random.default_rng(seed_sequence(master_seed, component))
