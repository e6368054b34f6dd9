"""Look inside one attention layer of the dual model for a single example.

Prints the Combo-ID score matrix, the thresholded inner-product scores, and
the fused attention weights, so the diagonal exclusion and the filtering can
be seen directly.
"""

import numpy as np

from deatt.config import from_dict
from deatt.model import build_variant, logits

np.set_printoptions(precision=3, suppress=True, linewidth=100)

cfg = from_dict({
    "model": {"embed_dim": 8, "embed_std": 0.5, "dnn_widths": [8]},
    "codebook": {"size": 256, "init_std": 0.5},
    "fusion": {"mode": "Multiply"},
    "train": {"verify": True},
    "seed": 3,
})
n = 5
params, _ = build_variant("Dual", cfg, n)
params.layers[0].fusion.mult_weight.data[:] = 0.8

ids = np.array([[12, 4, 999, 7, 31]], dtype=np.uint64)
_, (state,) = logits(params, ids, training=True, keep_states=True)

# %% Combo-ID scores; the diagonal holds the softmax sentinel
A_m = state.A_m[0].copy()
A_m[np.eye(n, dtype=bool)] = np.nan
print("A_m (diagonal excluded):\n", A_m)

# %% Collapse-avoiding scores: entries below the mean modulus are zeroed
A_c = state.A_c[0].copy()
A_c[np.eye(n, dtype=bool)] = np.nan
print(f"\nthreshold = {state.thresh:.3f}")
print("A_c:\n", A_c)

# %% Fused attention: rows sum to one, diagonal is exactly zero
w = state.weights[0]
print("\nattention weights:\n", w)
print("row sums:", w.sum(-1))
