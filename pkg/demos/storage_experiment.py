"""Storage held by one node under bitcoin, coinPrune and securePrune, plus join times.

Desk scale: snapshots every 100 blocks, 50 confirmations, 1000 blocks of 0.25 MiB.
"""

import dataclasses
import sys

from secureprune import simnet

cfg = simnet.SimConfig.desk(n=60)
metrics = simnet.compare_protocols(cfg)

for protocol in simnet.PROTOCOLS:
    series = metrics.retained_blocks(protocol)
    marks = "".join("#" if b > 120 else "+" if b > 60 else "." for b in series[::20])
    print(f"{protocol:>12} peak {max(series):4d} blocks  final {series[-1]:4d}  {marks}")

print(f"securePrune saves {100 * metrics.reduction():.1f}% at height {cfg.duration_blocks}")
print("coinPrune postponed windows:", [(h, p, c) for h, p, c, ok in metrics.windows if not ok])

# joining later costs bitcoin more and more; the pruned chains stay flat
for h in (100, 400, 700, 1000):
    times = {p: simnet.simulate_join(dataclasses.replace(cfg, protocol=p), h)
             for p in simnet.PROTOCOLS}
    print(f"join at {h:4d}: " + "  ".join(f"{p} {t:7.0f} s" for p, t in times.items()))

if len(sys.argv) > 1:
    simnet.export_metrics(metrics, sys.argv[1])
    print("CSV written to", sys.argv[1])
