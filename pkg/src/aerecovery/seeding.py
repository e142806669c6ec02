"""Order-independent seed derivation.

Every random object in the package is drawn from its own
``numpy.random.Generator`` whose seed is a splitmix64 hash of a base seed and
a tuple of integer indices (matrix index, trial index, restart index, ...).
Because nothing is drawn from a shared stream, results do not depend on the
order or the chunking in which work is scheduled.

The mix is::

    h = splitmix64(seed)
    for i in indices:
        h = splitmix64(h ^ splitmix64(i + GOLDEN))

with the usual splitmix64 finalizer constants.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MUL1 = 0xBF58476D1CE4E5B9
MUL2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * MUL1) & MASK64
    z = ((z ^ (z >> 27)) * MUL2) & MASK64
    return z ^ (z >> 31)


def mix_seed(seed: int, *indices: int) -> int:
    """Hash ``seed`` and ``indices`` into a 64-bit seed."""
    h = splitmix64(int(seed) & MASK64)
    for i in indices:
        h = splitmix64(h ^ splitmix64((int(i) + GOLDEN) & MASK64))
    return h


def rng_for(seed: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(mix_seed(seed, *indices))
