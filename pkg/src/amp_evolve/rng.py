"""Keyed, counter-based random streams.

Every random quantity in the package is drawn from a Philox generator
whose 128-bit key is derived from ``(seed, stream, *path)``. Two draws
with different keys are independent; the same key always reproduces the
same numbers, independent of the order in which keys are visited.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags
MATRIX = 1
SIGNAL = 2
NOISE = 3
POSITION_HASH = 4
MONTE_CARLO = 5
GENERIC = 6
REPLICATION = 7
INIT = 8


def derive_key(seed: int, *path: int) -> int:
    """Hash ``(seed, *path)`` to a 64-bit integer."""
    entropy = [int(seed) & MASK64] + [int(p) & MASK64 for p in path]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def generator(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for the stream named by ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *path)))


def row_generator(base_key: int, row: int) -> np.random.Generator:
    """Generator for row ``row`` under an already-derived ``base_key``.

    The row index occupies the high word of the Philox key, so entry
    ``(row, j)`` is the ``j``-th value of its own counter stream.
    """
    key = np.array([base_key & MASK64, int(row) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class RowStreams:
    """Reusable equivalent of :func:`row_generator` for many rows of one key.

    ``at(row)`` rewinds a single Philox instance to the start of the row's
    stream, which avoids constructing a bit generator per row. Draws are
    bit-identical to ``row_generator(base_key, row)``.
    """

    def __init__(self, base_key: int):
        self._key = base_key & MASK64
        self._bg = np.random.Philox(key=np.array([self._key, 0], dtype=np.uint64))
        self._gen = np.random.Generator(self._bg)

    def at(self, row: int) -> np.random.Generator:
        self._bg.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.zeros(4, dtype=np.uint64),
                "key": np.array([self._key, int(row) & MASK64], dtype=np.uint64),
            },
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


def replication_seed(base_seed: int, rep: int) -> int:
    return derive_key(base_seed, REPLICATION, rep)
