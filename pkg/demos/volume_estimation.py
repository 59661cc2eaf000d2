"""
Volume estimation and the per-dApp bias grid
============================================
"""

# %%
import numpy as np

from relaymining.estimator import estimate_volume, run_bias_experiment

print(estimate_volume(500, 0.05))

rng = np.random.default_rng(0)
draws = rng.binomial(10**6, 0.01, size=10_000) / 0.01
print("mean estimate", draws.mean())

# %%
cells = run_bias_experiment(draws=10_000, seed=0)
ds = sorted({c.difficulty for c in cells})
vs = sorted({c.participation for c in cells})
grid = {(c.difficulty, c.participation): c for c in cells}

print("bias % (rows: difficulty, columns: participation)")
print("        " + "".join(f"{v:>9.3f}" for v in vs))
for d in ds:
    print(f"{d:>7}  " + "".join(f"{grid[d, v].bias_pct:>9.3f}" for v in vs))

# %%
print("relative variability %")
for d in ds:
    print(f"{d:>7}  " + "".join(f"{grid[d, v].relative_variability_pct:>9.2f}" for v in vs))
