"""
Trace-driven simulation
=======================

Run the four synthetic traffic shapes through the controller and
compare the target error with the volume estimation error.
"""

# %%
from relaymining.config import Config
from relaymining.tracesim import compute_metrics, run_simulation, synth_trace, warmup_blocks

cfg = Config()
skip = warmup_blocks(cfg.difficulty.alpha)

for shape in ("steady", "soft-surge", "step-drop", "step-surge"):
    res = run_simulation(synth_trace(shape, seed=0), cfg)
    m = compute_metrics(res.records, cfg.difficulty.target_claims, skip=skip)
    print(
        f"{shape:11s} target err [{m.min_target_error_pct:+8.1f}, {m.max_target_error_pct:+8.1f}]  "
        f"volume err [{m.min_volume_error_pct:+5.2f}, {m.max_volume_error_pct:+5.2f}]"
    )

# %%
# Full mode replays the same draws with real relays, tries and proofs.
cfg.difficulty.target_claims = 100
trace = synth_trace("steady", {"blocks": 24, "level": 2_000}, seed=0)
fast = run_simulation(trace, cfg, mode="fast")
full = run_simulation(trace, cfg, mode="full")
print("same claims:", [r.claims for r in fast.records] == [r.claims for r in full.records])
print("minted", full.registry.ledger.minted, "burned", full.registry.ledger.burned)
