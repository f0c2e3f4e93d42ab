"""Counter-based random streams.

A stream is identified by ``(seed, stream_id)`` and nothing else, so the
draws for one training step or one layer never depend on how many other
streams were consumed before it, or on which worker consumed them.

The bit generator is Philox-4x64 keyed with the two 64-bit words.
Gaussian variates come from numpy's ``Generator.standard_normal``, the
256-layer ziggurat method; uniform variates from ``Generator.random``.
Both are fixed, documented algorithms in numpy >= 1.17.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# Top byte of a derived stream id names what the stream is used for.
PURPOSE_NOISE = 1
PURPOSE_SAMPLING = 2
PURPOSE_INIT = 3
PURPOSE_DATA = 4
PURPOSE_CHECK = 5


@dataclass(frozen=True)
class NoiseStream:
    """Reproducible source of random draws.

    Each call to :meth:`generator` starts the stream from the beginning, so a
    stream handed to two consumers yields the same numbers to both.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, shape) -> np.ndarray:
        return self.generator().standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self.generator().random(shape)

    def child(self, purpose: int, step: int = 0, index: int = 0) -> "NoiseStream":
        return NoiseStream(self.seed, derive_stream_id(purpose, step, index))


def derive_stream_id(purpose: int, step: int = 0, index: int = 0) -> int:
    """Pack ``(purpose, step, index)`` into one 64-bit id.

    Layout: 8 bits purpose | 40 bits step | 16 bits index.
    """
    if not 0 <= purpose < (1 << 8):
        raise ValueError(f"purpose out of range: {purpose}")
    if not 0 <= step < (1 << 40):
        raise ValueError(f"step out of range: {step}")
    if not 0 <= index < (1 << 16):
        raise ValueError(f"index out of range: {index}")
    return (purpose << 56) | (step << 16) | index
