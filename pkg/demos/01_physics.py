"""
Energy and latency of one device in one round
=============================================

Computation energy grows with the square of the CPU clock, computation time
falls with it. Upload time depends on the realized channel.
"""

import numpy as np

from feelsched.config import SystemConfig
from feelsched.physics import (achievable_rate, compute_energy, compute_time, draw_channel, surrogate_rate,
                               transmission, tx_power_for)

cfg = SystemConfig()
print(f"update size {cfg.update_bits:.0f} bits, {cfg.cycles_c:.4g} cycles per local update")

# sweep the CPU clock
for f in (0.25e9, 0.5e9, 1.0e9, 1.5e9):
    print(f"f = {f / 1e9:.2f} GHz: E_cmp = {compute_energy(f, cfg):.4f} J, t_cmp = {compute_time(f, cfg):.3f} s")

# the scheduler plans with a channel-free rate estimate
for n in (1, 2, 4):
    print(f"{n} devices sharing the band: planned rate {surrogate_rate(n, cfg) / 1e6:.1f} Mbit/s each")

# one realized upload with path-loss-compensated power
rng = np.random.default_rng(0)
beta = 0.8
p_tx = tx_power_for(beta, cfg)
gain_sq = draw_channel(beta, rng)
rate = achievable_rate(0.5, p_tx, gain_sq, cfg)
t_tr, e_tr = transmission(rate, p_tx, cfg)
print(f"|h|^2 = {gain_sq:.3f}: rate {rate / 1e6:.1f} Mbit/s, upload {1e3 * t_tr:.2f} ms, {1e3 * e_tr:.3f} mJ")
