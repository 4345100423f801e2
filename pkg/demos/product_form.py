"""Stationary law of the sleep/back-off chain on a small conflict graph.

Three links on a path (0-1-2): the end links never interfere with each
other, so they may transmit together while the middle one waits.
"""
import numpy as np

from sleepcsma import AggressivenessProfile, ConflictGraph, build_state_index
from sleepcsma.analytic import awake_fraction, detailed_balance_residual, stationary_distribution, throughput
from sleepcsma.topology import mask_to_bits

graph = ConflictGraph.from_edges(3, [(0, 1), (1, 2)])
index = build_state_index(graph)
profile = AggressivenessProfile.create(r=[1.0, 0.5, 1.0], rho=[0.0, 1.0, 0.0])
dist = stationary_distribution(index, profile)

print(f"{len(index)} states, log normalizer {dist.log_normalizer:.4f}")
top = np.argsort(dist.probabilities)[::-1][:5]
print("most likely states (awake bits / transmitting bits):")
for i in top:
    a = mask_to_bits(int(index.a_masks[i]), 3)
    x = mask_to_bits(int(index.x_masks[i]), 3)
    print(f"  awake={a} tx={x}  p={dist.probabilities[i]:.4f}")

print("throughput   ", np.round(throughput(dist), 4))
print("awake share  ", np.round(awake_fraction(dist), 4))
print("balance check", f"{detailed_balance_residual(dist, graph, profile):.1e}")
