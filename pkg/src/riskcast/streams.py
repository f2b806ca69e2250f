"""Deterministic, parallel-safe random number streams.

Every stochastic stage of the pipeline draws from its own counter-based
Philox stream keyed by ``(seed, stage, index)``.  Streams are independent,
reproducible across platforms, and independent of evaluation order, so a
dataset generated item-by-item in parallel is bit-identical to the serial
run.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "STAGE_DATASET",
    "STAGE_CALIBRATION",
    "STAGE_TEST",
    "STAGE_EPISODE",
    "STAGE_CORPUS",
    "STAGE_SWEEP",
    "stream",
    "substream_key",
]

_MASK64 = (1 << 64) - 1

# Stage identifiers; one namespace per pipeline phase so calibration, test
# and episode randomness never collide for the same item index.
STAGE_DATASET = 1
STAGE_CALIBRATION = 2
STAGE_TEST = 3
STAGE_EPISODE = 4
STAGE_CORPUS = 5
STAGE_SWEEP = 6


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def substream_key(*parts: int) -> int:
    """Fold integer identifiers into a single 64-bit sub-key."""
    h = 0
    for p in parts:
        h = _splitmix64((h ^ (int(p) & _MASK64)) & _MASK64)
    return h


def stream(seed: int, stage: int, index: int = 0) -> np.random.Generator:
    """Return the Philox generator for ``(seed, stage, index)``.

    The 128-bit Philox key is ``[seed, mix(stage, index)]``; distinct
    (stage, index) pairs therefore yield statistically independent streams
    under the same experiment seed.
    """
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = np.array([seed & _MASK64, substream_key(stage, index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
