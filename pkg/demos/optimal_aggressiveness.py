"""Offline aggressiveness for the 12-link reference network.

Every link offers 0.077 of the channel; the PDT slack puts four links in
each of three groups, from lax (0.8) to strict (0.1) delay targets.
"""
import numpy as np

from sleepcsma import ConflictGraph, TrafficSpec, build_state_index, solve
from sleepcsma.analytic import awake_fraction, stationary_distribution, throughput
from sleepcsma.regions import feasibility_margin

graph = ConflictGraph.complete(12)
traffic = TrafficSpec(np.full(12, 0.077), [0.8] * 4 + [0.4] * 4 + [0.1] * 4)
index = build_state_index(graph)
print(f"state index: {len(index)} states")

margin = feasibility_margin(index, traffic.lam, traffic.awake_target)
print(f"feasibility: {margin.verdict.value}, margin {margin.margin:.2e}")

res = solve(index, traffic)
print(f"{res.status.value} after {res.iterations} iterations, KKT residual {res.kkt_residual:.1e}")
dist = stationary_distribution(index, res.profile())
s, f = throughput(dist), awake_fraction(dist)
for name, links in (("slack 0.8", slice(0, 4)), ("slack 0.4", slice(4, 8)), ("slack 0.1", slice(8, 12))):
    print(f"  {name}: r*={res.r_star[links].mean():+.4f} rho*={res.rho_star[links].mean():+.4f} "
          f"s={s[links].mean():.4f} awake={f[links].mean():.4f}")
