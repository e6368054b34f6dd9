"""Combo-ID attention scores: interaction tensor, re-weight subnet, diagonal removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric_core as nc
from .codebook import ComboId, GatedSiameseCodebook, combo_id
from .feature_space import Example
from .hashing import combo_fnv_array


class ReweightSubnet:
    """Two-layer perceptron mapping each pair embedding to one score.

    The same weights serve every ordered pair.
    """

    def __init__(self, w1: nc.Tensor, b1: nc.Tensor, w2: nc.Tensor, b2: nc.Tensor,
                 activation: str = "relu"):
        d, h = w1.shape
        if b1.shape != (h,) or w2.shape != (h, 1) or b2.shape != (1,):
            raise nc.ShapeError("inconsistent re-weight subnet shapes")
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self.activation = activation

    @classmethod
    def init(cls, dim: int, hidden: int, rng: np.random.Generator, activation: str = "relu",
             prefix: str = "reweight", dtype=np.float64) -> "ReweightSubnet":
        def xavier(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)

        return cls(
            nc.parameter(xavier(dim, hidden), f"{prefix}.w1"),
            nc.parameter(np.zeros(hidden, dtype=dtype), f"{prefix}.b1"),
            nc.parameter(xavier(hidden, 1), f"{prefix}.w2"),
            nc.parameter(np.zeros(1, dtype=dtype), f"{prefix}.b2"),
            activation,
        )

    def parameters(self) -> dict[str, nc.Tensor]:
        return {t.name: t for t in (self.w1, self.b1, self.w2, self.b2)}


@dataclass
class InteractionTensor:
    E: nc.Tensor  # (..., n, n, d)
    combo_ids: list[list[ComboId]] | None = None


def pair_fnv(ids: np.ndarray) -> np.ndarray:
    """FNV states of every ordered Combo-ID for a (B, n) batch -> (B, n, n)."""
    ids = np.asarray(ids, dtype=np.uint64)
    n = ids.shape[-1]
    fields = np.arange(n, dtype=np.uint64)
    return combo_fnv_array(
        fields[:, None], ids[..., :, None], fields[None, :], ids[..., None, :]
    )


def interaction_tensor(ids: np.ndarray, gsc: GatedSiameseCodebook) -> nc.Tensor:
    """Batched interaction tensor E of shape (B, n, n, d), diagonal included."""
    return gsc.lookup(pair_fnv(ids))


def build_interaction_tensor(ex: Example, gsc: GatedSiameseCodebook) -> InteractionTensor:
    ids = list(ex.feature_ids)
    n = len(ids)
    cids = [[combo_id(i, ids[i], j, ids[j]) for j in range(n)] for i in range(n)]
    E = interaction_tensor(np.asarray([ids], dtype=np.uint64), gsc)
    return InteractionTensor(nc.reshape(E, E.shape[1:]), cids)


def reweight_scores(E, net: ReweightSubnet) -> nc.Tensor:
    """Project every pair embedding to a scalar: (..., n, n, d) -> (..., n, n)."""
    if isinstance(E, InteractionTensor):
        E = E.E
    if E.shape[-1] != net.w1.shape[0]:
        raise nc.ShapeError(f"pair embedding dim {E.shape[-1]} != subnet input {net.w1.shape[0]}")
    hidden = nc.apply_activation(net.activation, nc.add(nc.matmul(E, net.w1), net.b1))
    out = nc.add(nc.matmul(hidden, net.w2), net.b2)
    return nc.reshape(out, out.shape[:-1])


def diagonal_mask(n: int) -> np.ndarray:
    return np.eye(n, dtype=bool)


def mask_diagonal(A, literal_zero: bool = False) -> nc.Tensor:
    """Exclude self-pairs: diagonal becomes the softmax sentinel (or 0 if ``literal_zero``)."""
    A = nc._as_tensor(A)
    if A.data.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise nc.ShapeError(f"mask_diagonal needs square matrices, got {A.shape}")
    value = 0.0 if literal_zero else nc.SENTINEL
    return nc.mask_fill(A, diagonal_mask(A.shape[-1]), value)


def combo_scores(ids: np.ndarray, gsc: GatedSiameseCodebook, net: ReweightSubnet,
                 literal_zero: bool = False) -> nc.Tensor:
    """A_m for a batch: masked re-weighted Combo-ID scores, shape (B, n, n)."""
    return mask_diagonal(reweight_scores(interaction_tensor(ids, gsc), net), literal_zero)
