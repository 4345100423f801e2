"""Saturated 802.11 DCF on the 12-link network.

Binary exponential back-off tops out just under 0.077 per link, so the
reference load cannot be carried and queues would grow.
"""
from sleepcsma import ConflictGraph
from sleepcsma.slotted import sweep_dcf_cw0

graph = ConflictGraph.complete(12)
best, table = sweep_dcf_cw0(graph, [16, 32, 64, 128, 256, 512, 1024], duration=20.0, seed=0)
for cw0, s in table.items():
    print(f"CW0={cw0:5d}  per-link throughput {s:.4f}{'  <- best' if cw0 == best else ''}")
print(f"offered load 0.077 per link; shortfall {0.077 - table[best]:.4f}")
