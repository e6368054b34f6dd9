"""Feature fields, per-field hashed embedding tables and the input layer."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numeric_core as nc
from .hashing import bucket_array, feature_fnv_array, hash_to_bucket


@dataclass(frozen=True)
class FieldSchema:
    field_index: int
    name: str
    bucket_count: int
    vocab_hint: int | None = None

    def __post_init__(self):
        if self.bucket_count < 1:
            raise ValueError(f"field {self.name!r}: bucket_count must be >= 1")


def check_schemas(schemas: Sequence[FieldSchema]) -> None:
    seen = [s.field_index for s in schemas]
    if sorted(seen) != list(range(len(schemas))):
        raise ValueError(f"field indices must be unique and cover 0..n-1, got {seen}")


@dataclass(frozen=True)
class Example:
    feature_ids: tuple[int, ...]
    label: int
    session_id: int


def encode_feature(field_index: int, raw_id: int) -> bytes:
    """2-byte field index then 8-byte raw ID, both little-endian."""
    return struct.pack("<HQ", field_index, raw_id)


class EmbeddingTable:
    """Hashed embedding matrix for one field."""

    def __init__(self, field: FieldSchema, weights: nc.Tensor, hash_seed: int):
        if weights.shape[0] != field.bucket_count:
            raise nc.ShapeError(
                f"table for {field.name!r} has {weights.shape[0]} rows, "
                f"expected {field.bucket_count}"
            )
        self.field = field
        self.weights = weights
        self.hash_seed = hash_seed

    @classmethod
    def init(cls, field: FieldSchema, dim: int, rng: np.random.Generator,
             hash_seed: int = 0, std: float = 0.01, dtype=np.float64) -> "EmbeddingTable":
        w = rng.normal(0.0, std, size=(field.bucket_count, dim)).astype(dtype)
        return cls(field, nc.parameter(w, name=f"embedding.{field.name}"), hash_seed)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def bucket(self, raw_id: int) -> int:
        return hash_to_bucket(
            self.hash_seed, encode_feature(self.field.field_index, raw_id), self.field.bucket_count
        )

    def buckets(self, raw_ids: np.ndarray) -> np.ndarray:
        fnv = feature_fnv_array(self.field.field_index, raw_ids)
        return bucket_array(fnv, self.hash_seed, self.field.bucket_count)


def lookup_embeddings(ids: np.ndarray, tables: Sequence[EmbeddingTable]) -> nc.Tensor:
    """Batch input layer: ``ids`` of shape (B, n) -> tensor (B, n, d)."""
    ids = np.asarray(ids, dtype=np.uint64)
    if ids.ndim != 2 or ids.shape[1] != len(tables):
        raise nc.ShapeError(f"ids shape {ids.shape} does not match {len(tables)} fields")
    dims = {t.dim for t in tables}
    if len(dims) != 1:
        raise nc.ShapeError(f"embedding dimensions differ across fields: {sorted(dims)}")
    cols = [nc.gather_rows(t.weights, t.buckets(ids[:, i])) for i, t in enumerate(tables)]
    return nc.stack(cols, axis=1)


def build_input(ex: Example, tables: Sequence[EmbeddingTable]) -> nc.Tensor:
    """One example's ``n x d`` input matrix; it serves as Q, K and V alike."""
    if len(ex.feature_ids) != len(tables):
        raise nc.ShapeError(
            f"example has {len(ex.feature_ids)} feature ids for {len(tables)} tables"
        )
    ids = np.asarray([ex.feature_ids], dtype=np.uint64)
    x = lookup_embeddings(ids, tables)
    return nc.reshape(x, x.shape[1:])
