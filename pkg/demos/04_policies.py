"""
Comparing policies on shared erasures
=====================================

Every policy sees the same channel realization for a given seed, so the
per-seed difference in area under the distortion curve is a paired gap.
With b_c = 2 the single post-initial reconstruction happens in round 1 for
every trigger, so the three block-level methods often tie exactly.
"""

import numpy as np
from tubeharq.catalog import build_catalog, generate_synthetic_clip
from tubeharq.distortion import make_distortion_model
from tubeharq.metrics import aois_auc, bootstrap_ci, paired_gap
from tubeharq.protocol import SessionConfig
from tubeharq.simulate import run_session

cat = build_catalog(generate_synthetic_clip(seed=2, motion_level="low"))
model = make_distortion_model(cat, seed=2)
J = lambda tr: aois_auc(tr).value

for b_c in (2, 3):
    cfg = SessionConfig(request_budget=16, compute_budget=b_c)
    print("b_c =", b_c)
    for base in ("GreedyBlock", "TubeWeightedBlock", "HysteresisTrigger"):
        gaps = [paired_gap(run_session(cat, cfg, model, "TubePackage", 0.2, s),
                           run_session(cat, cfg, model, base, 0.2, s), J) for s in range(30)]
        m, lo, hi = bootstrap_ci(np.array(gaps))
        print(f"  TubePackage - {base:17s}: {m:+.4f}  [{lo:+.4f}, {hi:+.4f}]")
