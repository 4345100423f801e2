"""Throughput and awake-time regions for three links in a triangle.

The capacity region is the convex hull of the independent sets; an
arrival vector inside it with an awake target between lambda and 1 can be
met exactly by some choice of aggressiveness.
"""
import numpy as np

from sleepcsma import ConflictGraph
from sleepcsma.regions import awake_region_bounds, capacity_boundary, feasibility_margin, in_capacity_region

graph = ConflictGraph.complete(3)
boundary = capacity_boundary(graph, samples=5)
print("boundary samples (each sums to one):")
for p in boundary[:6]:
    print("  ", p.round(3), f"sum={p.sum():.3f}")

for lam in ([0.3, 0.3, 0.3], [0.4, 0.4, 0.3], [0.2, 0.1, 0.0]):
    print(f"lambda={lam}: inside={in_capacity_region(graph, lam)}")

lam = np.array([0.2, 0.3, 0.1])
print("awake box", awake_region_bounds(lam).intervals())
for f in ([0.5, 0.6, 0.4], [0.2, 0.3, 0.1]):
    rep = feasibility_margin(graph, lam, f)
    print(f"f={f}: {rep.verdict.value}, margin {rep.margin:.4f}")
