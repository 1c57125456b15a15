"""Seeded random streams.

Every random draw in the package comes from a PCG64 generator keyed by
``SeedSequence(seed, spawn_key=(domain, index))``. ``index`` is ``0`` for a
domain-wide stream and ``i + 1`` for node ``i``, so per-node data can be
regenerated independently of how many nodes precede it, and graph and
problem generation never share a stream.
"""

import numpy as np

GRAPH = 0
QUADRATIC = 1
LOGISTIC = 2

_MASK64 = (1 << 64) - 1


def stream(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(domain, index))
    return np.random.Generator(np.random.PCG64(ss))


def node_stream(seed: int, domain: int, node: int) -> np.random.Generator:
    return stream(seed, domain, node + 1)
