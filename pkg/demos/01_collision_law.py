"""How often do two distinct Combo-IDs land on the same codeword?

With one hash table of ``s`` slots the answer is about ``1/s``.  The gated
siamese codebook adds ``k`` more tables with independent seeds, and a pair
only stays fully confused when it collides in every one of them.
"""

import numpy as np

from deatt.codebook import GatedSiameseCodebook, combo_id, estimate_joint_collision_rate, address

# %% A single codebook: two IDs, one slot
rng = np.random.default_rng(0)
gsc = GatedSiameseCodebook.init(size=16, dim=4, k=3, rng=rng, seed=1)
a = combo_id(0, 17, 3, 5)
for raw in range(200):
    b = combo_id(0, raw, 3, 6)
    if address(gsc.main, a) == address(gsc.main, b):
        break
print(f"{a} and {b} share main codeword {address(gsc.main, a)}")
print("siamese slots:", [(address(cb, a), address(cb, b)) for cb in gsc.siamese])

# %% Monte Carlo over many random pairs
s = 16
print(f"\n{'k':>2} {'measured':>10} {'(1/s)^k':>10}")
for k in (1, 2, 3):
    rate = estimate_joint_collision_rate(k, s, 1_000_000, rng_seed=7)
    print(f"{k:>2} {rate:10.3g} {(1 / s) ** k:10.3g}")
