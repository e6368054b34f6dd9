"""Fusion of Combo-ID scores and collapse-avoiding scores."""

from __future__ import annotations

import numpy as np

from . import numeric_core as nc
from .combo_attention import diagonal_mask

MODES = ("WeightedSum", "GatedBalance", "Multiply")

TABLE_NAMES = {
    "WeightedSum": "Weighted Sum",
    "GatedBalance": "Gated Balance",
    "Multiply": "Multiply",
}


class FusionParams:
    """Learnable fusion parameters for one attention layer.

    ``alpha``/``beta`` weight the two score matrices; the gate net maps each
    A_c entry through ``sigmoid(w2 . tanh(w1 x + b1) + b2)``; ``mult_weight``
    scales A_c inside the multiplicative gate.
    """

    def __init__(self, mode: str, alpha, beta, gate_w1, gate_b1, gate_w2, gate_b2, mult_weight):
        if mode not in MODES:
            raise ValueError(f"unknown fusion mode {mode!r}; expected one of {MODES}")
        self.mode = mode
        self.alpha, self.beta = alpha, beta
        self.gate_w1, self.gate_b1 = gate_w1, gate_b1
        self.gate_w2, self.gate_b2 = gate_w2, gate_b2
        self.mult_weight = mult_weight

    @classmethod
    def init(cls, mode: str, rng: np.random.Generator, gate_hidden: int = 8,
             prefix: str = "fusion", dtype=np.float64) -> "FusionParams":
        p = lambda v, n: nc.parameter(np.asarray(v, dtype=dtype), f"{prefix}.{n}")  # noqa: E731
        lim1 = np.sqrt(6.0 / (1 + gate_hidden))
        return cls(
            mode,
            alpha=p([1.0], "alpha"),
            beta=p([1.0], "beta"),
            gate_w1=p(rng.uniform(-lim1, lim1, size=(1, gate_hidden)), "gate_w1"),
            gate_b1=p(np.zeros(gate_hidden), "gate_b1"),
            gate_w2=p(rng.uniform(-lim1, lim1, size=(gate_hidden, 1)), "gate_w2"),
            gate_b2=p([0.0], "gate_b2"),
            mult_weight=p([0.0], "mult_weight"),
        )

    def parameters(self) -> dict[str, nc.Tensor]:
        """Only the tensors the active mode actually uses."""
        if self.mode == "WeightedSum":
            ts = (self.alpha, self.beta)
        elif self.mode == "GatedBalance":
            ts = (self.gate_w1, self.gate_b1, self.gate_w2, self.gate_b2)
        else:
            ts = (self.mult_weight,)
        return {t.name: t for t in ts}


def gate(p: FusionParams, x: nc.Tensor) -> nc.Tensor:
    """Entrywise gate g(x) in (0, 1), same shape as ``x``."""
    col = nc.reshape(x, x.shape + (1,))
    hidden = nc.tanh(nc.add(nc.matmul(col, p.gate_w1), p.gate_b1))
    out = nc.sigmoid(nc.add(nc.matmul(hidden, p.gate_w2), p.gate_b2))
    return nc.reshape(out, x.shape)


def fuse(A_m, A_c, p: FusionParams, literal_zero: bool = False) -> nc.Tensor:
    """Pre-softmax fused scores; the excluded diagonal stays excluded."""
    A_m, A_c = nc._as_tensor(A_m), nc._as_tensor(A_c)
    if A_m.shape != A_c.shape:
        raise nc.ShapeError(f"fusion inputs differ in shape: {A_m.shape} vs {A_c.shape}")
    diag = diagonal_mask(A_m.shape[-1])
    # strip the sentinel so it never enters arithmetic
    m = nc.mask_fill(A_m, diag, 0.0)
    c = nc.mask_fill(A_c, diag, 0.0)
    if p.mode == "WeightedSum":
        out = nc.add(nc.mul(p.alpha, m), nc.mul(p.beta, c))
    elif p.mode == "GatedBalance":
        g = gate(p, c)
        out = nc.add(m, nc.mul(g, nc.sub(c, m)))
    elif p.mode == "Multiply":
        out = nc.mul(nc.scale(nc.sigmoid(nc.mul(p.mult_weight, c)), 2.0), m)
    else:
        raise ValueError(f"unknown fusion mode {p.mode!r}")
    return nc.mask_fill(out, diag, 0.0 if literal_zero else nc.SENTINEL)


def attention_output(pre, V) -> nc.Tensor:
    """``softmax_rows(pre) @ V``."""
    pre, V = nc._as_tensor(pre), nc._as_tensor(V)
    if pre.shape[-1] != V.shape[-2]:
        raise nc.ShapeError(f"score columns {pre.shape[-1]} != value rows {V.shape[-2]}")
    return nc.matmul(nc.softmax_rows(pre), V)
