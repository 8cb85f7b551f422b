"""Energy, latency and rate model of one device in one round.

Every function broadcasts over numpy arrays so the simulator can evaluate a
whole device population at once; scalars go in and come out as floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig


class ZeroRate(ArithmeticError):
    """A device with zero achievable rate was asked to transmit."""


@dataclass(frozen=True)
class ChannelDraw:
    gain_sq: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class PhysicsOutcome:
    rate: float
    t_tr: float
    t_cmp: float
    e_cmp: float
    e_tr: float

    @property
    def energy(self) -> float:
        return self.e_cmp + self.e_tr

    @property
    def latency(self) -> float:
        return self.t_cmp + self.t_tr


def compute_energy(f, cfg: SystemConfig):
    """DVFS computation energy ``lambda * c * f**2`` in joules."""
    return cfg.power_coeff * cfg.cycles_c * np.square(f)


def compute_time(f, cfg: SystemConfig):
    return cfg.cycles_c / f


def achievable_rate(rho, p_tx, gain_sq, cfg: SystemConfig):
    """Shannon rate in bits/s over a ``rho`` share of the band."""
    w = rho * cfg.bandwidth
    return w * np.log2(1.0 + p_tx * gain_sq / (w * cfg.noise_density))


def transmission(rate, p_tx, cfg: SystemConfig):
    """Return ``(t_tr, e_tr)`` for uploading ``update_bits`` at ``rate``."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate <= 0):
        raise ZeroRate("cannot transmit at a non-positive rate")
    t_tr = cfg.update_bits / rate
    e_tr = p_tx * t_tr
    if t_tr.ndim == 0:
        return float(t_tr), float(e_tr)
    return t_tr, e_tr


def surrogate_rate(n_sched: int, cfg: SystemConfig, gamma: float | None = None) -> float:
    """Conservative per-device rate used before channels are known.

    Uses the mean SNR implied by ``P_k = P0 / beta_k`` and an equal share of
    the band, scaled down by the rate margin.
    """
    g = cfg.rate_margin if gamma is None else gamma
    B = cfg.bandwidth
    return g * B / n_sched * np.log2(1.0 + cfg.eff_rx_power_P0 * n_sched / (B * cfg.noise_density))


def surrogate_tx_time(n_sched: int, cfg: SystemConfig) -> float:
    return cfg.update_bits / surrogate_rate(n_sched, cfg)


def tx_power_for(beta, cfg: SystemConfig):
    """Channel-inversion power so every device sees the same mean SNR."""
    return cfg.eff_rx_power_P0 / beta


def draw_channel(beta, rng: np.random.Generator):
    """Rayleigh fading: ``|g|^2`` exponential with mean ``beta``."""
    return rng.exponential(scale=beta)


def draw_cpu_freq(cfg: SystemConfig, rng: np.random.Generator, size=None):
    lo, hi = cfg.cpu_freq_range
    return rng.uniform(lo, hi, size=size)


def draw_fading_factors(cfg: SystemConfig, rng: np.random.Generator, size=None):
    lo, hi = cfg.fading_dB_range
    return 10.0 ** (rng.uniform(lo, hi, size=size) / 10.0)


def outcome(f: float, beta: float, gain_sq: float, n_transmitting: int, cfg: SystemConfig) -> PhysicsOutcome:
    """Full per-device accounting for a device that uploads this round."""
    p_tx = tx_power_for(beta, cfg)
    rate = float(achievable_rate(1.0 / n_transmitting, p_tx, gain_sq, cfg))
    t_tr, e_tr = transmission(rate, p_tx, cfg)
    return PhysicsOutcome(rate, t_tr, float(compute_time(f, cfg)), float(compute_energy(f, cfg)), e_tr)
