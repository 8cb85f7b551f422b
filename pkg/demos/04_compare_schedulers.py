"""
Proposed scheduler against random selection
===========================================

A short desk-scale run: 20 devices, 2 scheduled per round, shards of three
labels, bursty arrivals. Prints accuracy and per-device energy side by side.
"""

import numpy as np

from feelsched.config import SystemConfig
from feelsched.sim import run, summarize

cfg = SystemConfig(num_devices=20, sched_cardinality=2, total_rounds=150, partition_model="shards(3)",
                   learning_rate=0.01)

results = {}
for sched in ("proposed", "random"):
    acc, energy = [], []
    for seed in range(3):
        logs = run(cfg.replace(seed=seed), sched)
        acc.append([log.test_accuracy for log in logs])
        energy.append(summarize(logs)["mean_energy_per_device"])
    results[sched] = (np.mean(acc, axis=0), float(np.mean(energy)))

print("round  proposed  random")
for t in (10, 25, 50, 100, 150):
    print(f"{t:5d}  {results['proposed'][0][t - 1]:8.3f}  {results['random'][0][t - 1]:6.3f}")
print(f"energy per device per round: proposed {results['proposed'][1]:.4f} J, random {results['random'][1]:.4f} J")
