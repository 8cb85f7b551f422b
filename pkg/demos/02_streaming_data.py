"""
Non-i.i.d. shards with streaming arrivals
=========================================

Each device holds samples from a few labels. The samples arrive over the run
in digit order, mostly inside one burst.
"""

import numpy as np

from feelsched.config import PartitionModel
from feelsched.data import assign_arrivals, partition, synth_corpus

rng = np.random.default_rng(1)
corpus = synth_corpus(10, 2000, 20, 4.0, rng)

# five devices, at most two labels each
parts = partition(corpus, PartitionModel.parse("shards(2)"), 5, rng)
total_time = 300 * 4.0
streams = [assign_arrivals(corpus.subset(p), "truncated_normal", total_time, rng) for p in parts]

for k, s in enumerate(streams):
    print(f"device {k}: label histogram {s.data.histogram().tolist()}")

# how much each device has seen at a few points in time
for t in (200, 400, 600, 800, 1200):
    print(f"t = {t:5.0f} s: " + "  ".join(f"{s.count_until(t):4d}" for s in streams))

# labels that arrived in one window
print("labels arriving in (400, 600] on device 0:", streams[0].window_hist(400, 600).tolist())
