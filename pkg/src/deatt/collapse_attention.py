"""Inner-product scores filtered by a batch-average magnitude threshold."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric_core as nc
from .combo_attention import diagonal_mask, mask_diagonal

MODES = ("scores", "binary")


@dataclass
class ThresholdState:
    """Running threshold; updated per training batch, read-only in evaluation."""

    ema_thresh: float = 0.0
    ema_decay: float = 0.99
    observation_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")

    def observe(self, value: float) -> None:
        if self.observation_count == 0:
            self.ema_thresh = value
        else:
            self.ema_thresh = self.ema_decay * self.ema_thresh + (1.0 - self.ema_decay) * value
        self.observation_count += 1


def raw_scores(Q, K, scale: bool = True, mask: bool = True, literal_zero: bool = False) -> nc.Tensor:
    """``Q K^T`` (optionally / sqrt(d)) with the diagonal masked out."""
    Q, K = nc._as_tensor(Q), nc._as_tensor(K)
    if Q.shape != K.shape:
        raise nc.ShapeError(f"Q and K shapes differ: {Q.shape} vs {K.shape}")
    S = nc.matmul(Q, nc.transpose(K))
    if scale:
        S = nc.scale(S, 1.0 / math.sqrt(Q.shape[-1]))
    return mask_diagonal(S, literal_zero) if mask else S


def mean_modulus(scores, include_diag: bool = False) -> float:
    """Mean |S[i,j]| over all matrices and ordered pairs (i != j unless ``include_diag``).

    Sentinel cells never count.
    """
    if isinstance(scores, nc.Tensor):
        scores = scores.data
    if isinstance(scores, (list, tuple)):
        scores = np.stack([s.data if isinstance(s, nc.Tensor) else np.asarray(s) for s in scores])
    S = np.asarray(scores, dtype=np.float64)
    if S.size == 0:
        raise ValueError("threshold needs at least one score matrix")
    n = S.shape[-1]
    use = S > nc.SENTINEL * 0.5
    if not include_diag:
        use = use & ~diagonal_mask(n)
    count = int(use.sum())
    if count == 0:
        return 0.0
    return float(np.abs(np.where(use, S, 0.0)).sum() / count)


def update_threshold(batch_scores, state: ThresholdState, include_diag: bool = False) -> float:
    """Fold this batch's mean modulus into ``state`` and return the batch value."""
    if isinstance(batch_scores, (list, tuple)) and not batch_scores:
        raise ValueError("empty batch")
    value = mean_modulus(batch_scores, include_diag)
    state.observe(value)
    return value


def threshold_keep(S, thresh: float, mode: str = "scores") -> np.ndarray:
    """Boolean keep-mask over off-diagonal cells (diagonal is always False)."""
    if thresh < 0:
        raise ValueError(f"threshold must be >= 0, got {thresh}")
    if mode not in MODES:
        raise ValueError(f"unknown collapse mode {mode!r}")
    S = S.data if isinstance(S, nc.Tensor) else np.asarray(S)
    keep = (np.abs(S) >= thresh) if mode == "scores" else (S >= thresh)
    return keep & ~diagonal_mask(S.shape[-1])


def apply_threshold(S, thresh: float, mode: str = "scores", literal_zero: bool = False) -> nc.Tensor:
    """A_c: retained raw scores (``scores``) or a 0/1 indicator (``binary``).

    Thresholding is a constant mask: retained scores pass gradient straight
    through, filtered cells receive none.
    """
    S = nc._as_tensor(S)
    keep = threshold_keep(S, thresh, mode)
    diag = diagonal_mask(S.shape[-1])
    if mode == "scores":
        return nc.mask_fill(S, ~keep & ~diag, 0.0)
    out = keep.astype(S.data.dtype)
    return mask_diagonal(nc.constant(out), literal_zero)


def collapse_scores(Q, K, state: ThresholdState, training: bool, mode: str = "scores",
                    scale: bool = True, include_diag_in_mean: bool = False,
                    literal_zero: bool = False, update_state: bool = True) -> tuple[nc.Tensor, float]:
    """A_c for a batch of queries/keys of shape (B, n, d).

    Training uses the live batch mean (and folds it into the EMA when
    ``update_state``); evaluation uses the frozen EMA, falling back to the
    batch mean if nothing was ever observed.
    """
    raw = raw_scores(Q, K, scale=scale, mask=False)
    if training or state.observation_count == 0:
        thresh = mean_modulus(raw, include_diag_in_mean)
        if training and update_state:
            state.observe(thresh)
    else:
        thresh = state.ema_thresh
    S = mask_diagonal(raw, literal_zero)
    return apply_threshold(S, thresh, mode, literal_zero), thresh
