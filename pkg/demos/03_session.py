"""
One session, round by round
===========================

Run the package-level policy over a lossy channel and watch the distortion
fall as missing packages are re-requested.
"""

from tubeharq.catalog import build_catalog, generate_synthetic_clip
from tubeharq.distortion import make_distortion_model
from tubeharq.protocol import SessionConfig, check_trace
from tubeharq.simulate import run_session

cat = build_catalog(generate_synthetic_clip(seed=4, motion_level="high"))
model = make_distortion_model(cat, seed=4)
cfg = SessionConfig(request_budget=16, compute_budget=3)

tr = run_session(cat, cfg, model, "TubePackage", per=0.25, seed=11)
print(f"t0={tr.t_init:.3f}  D_init={tr.d_init:.3f}")
for r in tr.rounds:
    got = sum(r.delivered)
    print(f"round {r.round}: asked {len(r.request):2d} got {got:2d}  u={r.u}  t={r.t:.3f}  D={r.distortion:.3f}")

print("protocol violations:", check_trace(tr, cat) or "none")
