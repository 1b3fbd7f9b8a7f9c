"""Deterministic random streams.

Every stochastic choice in the package draws from a counter-based Philox
generator keyed by (seed, purpose, epoch, batch, layer).  Streams are
stateless across calls: reconstructing the same key yields the same draws,
which is what makes training runs and resumed runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

# Purpose tags; one per independent consumer of randomness.
SPLIT = 1
SYNTH = 2
SHUFFLE = 3
DROPOUT = 4
CODEBOOK_INIT = 5
PARAM_INIT = 6
KMEANS = 7
SILHOUETTE = 8

_MASK64 = (1 << 64) - 1


def philox_key(seed: int, purpose: int, epoch: int = 0, batch: int = 0, layer: int = 0) -> int:
    """Pack the stream coordinates into a 128-bit Philox key."""
    if not 0 <= purpose < (1 << 8):
        raise ValueError(f"purpose out of range: {purpose}")
    if not 0 <= epoch < (1 << 16):
        raise ValueError(f"epoch out of range: {epoch}")
    if not 0 <= batch < (1 << 28):
        raise ValueError(f"batch out of range: {batch}")
    if not 0 <= layer < (1 << 12):
        raise ValueError(f"layer out of range: {layer}")
    low = (purpose << 56) | (epoch << 40) | (batch << 12) | layer
    return ((seed & _MASK64) << 64) | low


def stream(seed: int, purpose: int, epoch: int = 0, batch: int = 0, layer: int = 0) -> np.random.Generator:
    """Generator for the given stream coordinates."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, purpose, epoch, batch, layer)))
