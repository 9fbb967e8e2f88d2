"""
What hindsight buys
===================

With the whole erasure realization known in advance, the offline planner picks
the reconstruction schedule with the smallest surrogate area.  The causal
threshold rule can never beat it.  Each reconstruction costs c_inp = 3.0 time
units, so on this objective the planner often prefers to reconstruct rarely.
"""

from tubeharq.catalog import build_catalog, generate_synthetic_clip
from tubeharq.channel import match_ge_params
from tubeharq.distortion import make_distortion_model
from tubeharq.policies import plan_offline, surrogate_auc, threshold_schedule
from tubeharq.protocol import SessionConfig
from tubeharq.simulate import realization

cat = build_catalog(generate_synthetic_clip(seed=9))
model = make_distortion_model(cat, seed=9)
cfg = SessionConfig(compute_budget=3)
n = cfg.compute_budget - cfg.u_init

for seed in range(5):
    t0, p0, units, path = realization(cat, cfg, model, match_ge_params(0.3), seed, 0)
    plan = plan_offline(t0, p0, units, path, cfg, n)
    causal = threshold_schedule(t0, p0, path, cfg, n)
    print(f"seed {seed}: offline {plan.schedule} -> {plan.surrogate:.4f}   "
          f"causal {causal} -> {surrogate_auc(causal, t0, p0, units, path, cfg):.4f}")
