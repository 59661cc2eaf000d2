"""
Difficulty feedback loop
========================

Feed the controller binomial claims from a fixed true volume and watch
claims per block settle on the target.
"""

# %%
import numpy as np

from relaymining.difficulty import DifficultyState

ctl = DifficultyState(target_claims=10_000, alpha=0.1, update_interval=4)
rng = np.random.default_rng(1)
true_volume = 250_000

history = []
for _ in range(120):
    claims = int(rng.binomial(true_volume, ctl.probability))
    history.append(ctl.observe_block(claims))

for obs in history[::12]:
    print(f"h={obs.height:3d}  p={obs.probability:.4f}  claims={obs.claims:6d}  r_ema={obs.r_ema:10.0f}")

# %%
tail = [o.claims for o in history[30:]]
print("mean claims after warm-up:", np.mean(tail))
