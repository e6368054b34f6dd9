"""Seeded 64-bit hashing of feature and Combo-ID payloads.

The scalar functions operate on ``bytes`` and are the reference; the
``*_array`` variants hash fixed-layout payloads column-wise with numpy and
must agree with them bit for bit.

Bucket choice is ``fmix64(fnv1a64(payload) ^ seed) % buckets``.  The murmur3
finalizer matters: without it, ``(h ^ seed) % 2**m`` is a fixed permutation of
``h % 2**m`` and every seed would collide on exactly the same pairs.
"""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

_U = np.uint64


def fnv1a64(payload: bytes) -> int:
    h = FNV_OFFSET
    for byte in payload:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def fmix64(h: int) -> int:
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & MASK64
    h ^= h >> 33
    return h


def hash_to_bucket(seed: int, payload: bytes, buckets: int) -> int:
    """Deterministic bucket index in ``[0, buckets)``."""
    if buckets < 1:
        raise ValueError(f"buckets must be >= 1, got {buckets}")
    return fmix64(fnv1a64(payload) ^ (seed & MASK64)) % buckets


def derive_seed(base: int, index: int) -> int:
    """Distinct, well-mixed seeds for a family of hash tables."""
    return fmix64((base * 0x9E3779B97F4A7C15 + index + 1) & MASK64)


# --------------------------------------------------------------------------
# vectorized forms


def _fnv_bytes(h: np.ndarray, values: np.ndarray, nbytes: int) -> np.ndarray:
    """Feed the ``nbytes`` little-endian bytes of each value into the state."""
    prime = _U(FNV_PRIME)
    ff = _U(0xFF)
    for b in range(nbytes):
        h = (h ^ ((values >> _U(8 * b)) & ff)) * prime
    return h


def _fmix_array(h: np.ndarray) -> np.ndarray:
    s33 = _U(33)
    h = h ^ (h >> s33)
    h = h * _U(0xFF51AFD7ED558CCD)
    h = h ^ (h >> s33)
    h = h * _U(0xC4CEB9FE1A85EC53)
    return h ^ (h >> s33)


def fnv_fields_array(*columns: tuple[np.ndarray, int]) -> np.ndarray:
    """FNV-1a over payloads laid out as consecutive little-endian integers.

    Each column is ``(values, nbytes)``; all value arrays broadcast together.
    """
    arrays = np.broadcast_arrays(*[np.asarray(v).astype(np.uint64) for v, _ in columns])
    h = np.full(arrays[0].shape, FNV_OFFSET, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for values, (_, nbytes) in zip(arrays, columns):
            h = _fnv_bytes(h, values, nbytes)
    return h


def bucket_array(fnv: np.ndarray, seed: int, buckets: int) -> np.ndarray:
    """Vectorized :func:`hash_to_bucket` given precomputed FNV states."""
    if buckets < 1:
        raise ValueError(f"buckets must be >= 1, got {buckets}")
    with np.errstate(over="ignore"):
        mixed = _fmix_array(fnv ^ _U(seed & MASK64))
    return (mixed % _U(buckets)).astype(np.intp)


def feature_fnv_array(field_index, ids) -> np.ndarray:
    """FNV state of the 2-byte field index + 8-byte raw-ID payload."""
    return fnv_fields_array((field_index, 2), (ids, 8))


def combo_fnv_array(field_i, id_i, field_j, id_j) -> np.ndarray:
    """FNV state of the ``[field_i | id_i | field_j | id_j]`` payload."""
    return fnv_fields_array((field_i, 2), (id_i, 8), (field_j, 2), (id_j, 8))
