"""
A small sweep
=============

The harness runs every (policy, budget, PER) cell over a clip corpus and writes
CSV tables, a summary and a manifest that replays the run exactly.
"""

import sys
import tempfile

from tubeharq.harness import SweepConfig, run_sweep

cfg = SweepConfig(seed=1, num_clips=6, session_seeds=4, per_grid=[0.1, 0.3],
                  request_budgets=[16], compute_budgets=[2])
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="tubeharq-")
res = run_sweep(cfg, output_dir=out)

print("wrote", sorted(p.name for p in res.output_dir.iterdir()))
for base, K, b_c, per, stratum, metric, n, mean, lo, hi in res.gaps:
    if stratum == "all" and metric == "J_aois":
        print(f"vs {base:17s} PER {per}: gap {mean:+.4f} [{lo:+.4f}, {hi:+.4f}]  n={n}")
