"""
Bursty erasures
===============

Match a two-state channel to a target loss rate and mean burst length, then
check the empirical statistics over a long run.
"""

from tubeharq.channel import burst_lengths, make_channel, match_ge_params, transmit_units

for per in (0.05, 0.2, 0.4):
    ge = match_ge_params(per, 4.0)
    e = transmit_units(make_channel(ge, 7, "demo", per), 200_000)
    print(f"PER {per:.2f}: p01={ge.p01:.4f} p10={ge.p10:.4f}  "
          f"empirical PER {e.mean():.4f}  mean burst {burst_lengths(e).mean():.2f}")

# the same seed and labels always give the same erasure pattern
a = transmit_units(make_channel(match_ge_params(0.2), 3, "x"), 50)
b = transmit_units(make_channel(match_ge_params(0.2), 3, "x"), 50)
print("reproducible:", (a == b).all())
print("".join("x" if z else "." for z in a))
