"""Deterministic, order-invariant assignment of datapoints to partitions.

Points are routed to partitions by hashing their feature vector, so the
assignment depends only on the point itself: reordering a dataset, or
inserting and deleting other points, never moves a point between partitions.
Two modes are supported:

``byte-hash``
    Each feature is serialized as its exact IEEE-754 binary64 bit pattern
    (little-endian, in order) and the bytes are hashed with 64-bit FNV-1a.
    Works for arbitrary real-valued features; bit-exact equality of the
    feature vector defines identity (no rounding).

``integer-sum``
    The sum of the (integer-valued) features, reduced mod 2**64. This is the
    classic pixel-sum routing for image data and requires every feature to be
    an exact integer.
"""

from __future__ import annotations

import math
import struct
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

HASH_MODES = ("byte-hash", "integer-sum")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class PartitionAssignment(NamedTuple):
    index: int
    partition_count: int


def _check_mode(hash_mode: str) -> None:
    if hash_mode not in HASH_MODES:
        raise InvalidConfigError(f"unknown hash mode {hash_mode!r}; expected one of {HASH_MODES}")


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def hash_feature(x: Sequence[float], hash_mode: str = "byte-hash") -> int:
    """Hash a feature vector to a non-negative 64-bit integer.

    Deterministic across processes and platforms; depends only on the values
    of ``x``, never on its position in a dataset.
    """
    _check_mode(hash_mode)
    values = [float(v) for v in x]
    if len(values) == 0:
        raise InvalidInputError("feature vector must have dimension >= 1")
    if not all(math.isfinite(v) for v in values):
        raise InvalidInputError("feature vector contains a non-finite entry")
    if hash_mode == "integer-sum":
        if not all(v.is_integer() for v in values):
            raise InvalidInputError("integer-sum hashing requires integer-valued features")
        return int(sum(int(v) for v in values)) % (1 << 64)
    return _fnv1a(struct.pack(f"<{len(values)}d", *values))


def assign_partition(x: Sequence[float], partition_count: int, hash_mode: str = "byte-hash") -> PartitionAssignment:
    """Assign a point to one of ``partition_count`` partitions by feature hash."""
    if partition_count < 1:
        raise InvalidConfigError(f"partition count must be >= 1, got {partition_count}")
    return PartitionAssignment(hash_feature(x, hash_mode) % partition_count, partition_count)


def assign_partitions(features: Iterable[Sequence[float]], partition_count: int,
                      hash_mode: str = "byte-hash") -> np.ndarray:
    """Vectorized :func:`assign_partition`; returns an int array of partition indices."""
    return np.array(
        [assign_partition(row, partition_count, hash_mode).index for row in features],
        dtype=np.int64,
    )
