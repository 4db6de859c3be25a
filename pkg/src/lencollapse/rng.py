"""Seeded random streams.

Every stochastic routine takes a 64-bit master seed. Independent trials draw
from ``derive_seed(master, index)`` so that results do not depend on the order
in which trials are executed.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
# floor(2**64 / golden ratio), the usual Weyl increment
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def derive_seed(master_seed, index):
    """Per-trial seed: ``master XOR (index * GOLDEN_GAMMA)`` modulo 2**64."""
    return (int(master_seed) ^ ((int(index) * GOLDEN_GAMMA) & _MASK64)) & _MASK64


def make_rng(seed):
    """PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
