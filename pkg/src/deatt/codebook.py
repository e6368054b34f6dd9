"""Combo-IDs, codebook addressing and the gated siamese codebook."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import numeric_core as nc
from .hashing import bucket_array, combo_fnv_array, derive_seed, hash_to_bucket


@dataclass(frozen=True)
class ComboId:
    """Ordered feature pair; ``(i, j)`` and ``(j, i)`` are different IDs."""

    field_i: int
    raw_id_i: int
    field_j: int
    raw_id_j: int

    def encode(self) -> bytes:
        return struct.pack("<HQHQ", self.field_i, self.raw_id_i, self.field_j, self.raw_id_j)


def combo_id(field_i: int, id_i: int, field_j: int, id_j: int) -> ComboId:
    return ComboId(field_i, id_i, field_j, id_j)


class Codebook:
    def __init__(self, weights: nc.Tensor, hash_seed: int):
        if weights.data.ndim != 2 or weights.shape[0] < 1:
            raise nc.ShapeError(f"codebook weights must be (s, d) with s >= 1, got {weights.shape}")
        self.weights = weights
        self.hash_seed = hash_seed

    @classmethod
    def init(cls, size: int, dim: int, rng: np.random.Generator, hash_seed: int,
             name: str = "codebook", std: float = 0.01, dtype=np.float64) -> "Codebook":
        w = rng.normal(0.0, std, size=(size, dim)).astype(dtype)
        return cls(nc.parameter(w, name=name), hash_seed)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def address(cb: Codebook, cid: ComboId) -> int:
    return hash_to_bucket(cb.hash_seed, cid.encode(), cb.size)


class GatedSiameseCodebook:
    """Main codebook plus ``k`` siamese codebooks voting through a sigmoid gate.

    With ``k == 0`` the gate is absent and lookups return the main codeword.
    """

    def __init__(self, main: Codebook, siamese: list[Codebook],
                 gate_weights: nc.Tensor | None, gate_bias: nc.Tensor | None):
        books = [main, *siamese]
        if len({(b.size, b.dim) for b in books}) != 1:
            raise nc.ShapeError("all codebooks must share size and dimension")
        seeds = [b.hash_seed for b in books]
        if len(set(seeds)) != len(seeds):
            raise ValueError("codebook hash seeds must be pairwise distinct")
        if siamese and gate_weights.shape != (len(siamese) * main.dim, 1):
            raise nc.ShapeError(f"gate weights must be ({len(siamese) * main.dim}, 1)")
        self.main = main
        self.siamese = siamese
        self.gate_weights = gate_weights
        self.gate_bias = gate_bias

    @classmethod
    def init(cls, size: int, dim: int, k: int, rng: np.random.Generator, seed: int = 0,
             prefix: str = "codebook", std: float = 0.01,
             dtype=np.float64) -> "GatedSiameseCodebook":
        main = Codebook.init(size, dim, rng, derive_seed(seed, 0), f"{prefix}.main", std, dtype)
        siamese = [
            Codebook.init(size, dim, rng, derive_seed(seed, t), f"{prefix}.siamese{t}", std, dtype)
            for t in range(1, k + 1)
        ]
        gw = gb = None
        if k:
            fan_in, fan_out = k * dim, 1
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            gw = nc.parameter(
                rng.uniform(-limit, limit, size=(fan_in, 1)).astype(dtype), f"{prefix}.gate_w"
            )
            gb = nc.parameter(np.zeros(1, dtype=dtype), f"{prefix}.gate_b")
        return cls(main, siamese, gw, gb)

    @property
    def k(self) -> int:
        return len(self.siamese)

    @property
    def dim(self) -> int:
        return self.main.dim

    def parameters(self) -> dict[str, nc.Tensor]:
        out = {self.main.weights.name: self.main.weights}
        for cb in self.siamese:
            out[cb.weights.name] = cb.weights
        if self.k:
            out[self.gate_weights.name] = self.gate_weights
            out[self.gate_bias.name] = self.gate_bias
        return out

    def lookup(self, fnv: np.ndarray) -> nc.Tensor:
        """Pair embeddings for precomputed Combo-ID FNV states of any shape.

        Returns a tensor of shape ``fnv.shape + (d,)``.
        """
        main = nc.gather_rows(self.main.weights, bucket_array(fnv, self.main.hash_seed, self.main.size))
        if not self.k:
            return main
        votes = [
            nc.gather_rows(cb.weights, bucket_array(fnv, cb.hash_seed, cb.size))
            for cb in self.siamese
        ]
        joined = votes[0] if self.k == 1 else nc.concat(votes, axis=-1)
        gate = nc.sigmoid(nc.add(nc.matmul(joined, self.gate_weights), self.gate_bias))
        return nc.mul(gate, main)


def interaction_embedding(gsc: GatedSiameseCodebook, cid: ComboId) -> nc.Tensor:
    """Gated embedding (length d) of one feature-interaction pair."""
    fnv = combo_fnv_array(cid.field_i, cid.raw_id_i, cid.field_j, cid.raw_id_j).reshape(1)
    e = gsc.lookup(fnv)
    return nc.reshape(e, (gsc.dim,))


def estimate_joint_collision_rate(k: int, s: int, trials: int, rng_seed: int = 0,
                                  n_fields: int = 64) -> float:
    """Monte Carlo fraction of distinct Combo-ID pairs colliding in all ``k`` codebooks."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(rng_seed)
    seeds = [derive_seed(rng_seed, t) for t in range(1, k + 1)]
    hits = 0
    done = 0
    chunk = 250_000
    while done < trials:
        m = min(chunk, trials - done)
        fa = rng.integers(0, n_fields, size=(2, m))
        fb = rng.integers(0, n_fields, size=(2, m))
        ia = rng.integers(0, 2**64, size=(2, m), dtype=np.uint64)
        ib = rng.integers(0, 2**64, size=(2, m), dtype=np.uint64)
        same = (fa[0] == fb[0]) & (ia[0] == ib[0]) & (fa[1] == fb[1]) & (ia[1] == ib[1])
        # identical draws are astronomically rare; nudge them apart
        ib[1, same] ^= np.uint64(1)
        ha = combo_fnv_array(fa[0], ia[0], fa[1], ia[1])
        hb = combo_fnv_array(fb[0], ib[0], fb[1], ib[1])
        joint = np.ones(m, dtype=bool)
        for seed in seeds:
            joint &= bucket_array(ha, seed, s) == bucket_array(hb, seed, s)
        hits += int(joint.sum())
        done += m
    return hits / trials
