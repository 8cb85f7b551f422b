"""
One scheduling decision, step by step
=====================================

Filter by deadline, score by queue-weighted energy minus importance, keep the
cheapest, then drop devices whose realized channel cannot meet the deadline.
"""

import numpy as np

from feelsched.config import SystemConfig
from feelsched.physics import draw_channel, draw_cpu_freq, draw_fading_factors, compute_time
from feelsched.scheduler import feasible_set, prune, schedule

cfg = SystemConfig(num_devices=8, sched_cardinality=3)
rng = np.random.default_rng(3)
f = draw_cpu_freq(cfg, rng, size=8)
beta = draw_fading_factors(cfg, rng, size=8)
Q = rng.uniform(0, 0.05, 8)
importance = rng.uniform(0, 2, 8)

feasible = feasible_set(f, cfg.sched_cardinality, cfg)
print("clock (GHz):", np.round(f / 1e9, 2).tolist())
print("feasible devices:", feasible.tolist())

decision = schedule(feasible, Q, f, importance[feasible], beta, cfg.sched_cardinality, cfg)
for k, s in zip(decision.feasible, decision.scores):
    print(f"  device {k}: Q={Q[k]:.3f} importance={importance[k]:.2f} score={s:+.4f}")
print("scheduled:", decision.scheduled.tolist())

# after local training the realized channels are known
chosen = decision.scheduled
gain_sq = np.array([draw_channel(beta[k], rng) for k in chosen])
result = prune(chosen, gain_sq, compute_time(f[chosen], cfg), beta[chosen], cfg)
print("uploading:", result.kept.tolist())
for k, why in result.removed:
    print(f"  dropped {k}: {why}")
