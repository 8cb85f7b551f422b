"""Virtual energy queues and the two-phase device selection.

Before training, devices are filtered by a latency test against the surrogate
rate and the cheapest drift-plus-penalty scores are scheduled. After training,
realized channels are checked and the weakest devices pruned until everyone
left can finish uploading inside the round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .physics import achievable_rate, compute_energy, compute_time, surrogate_rate


def queue_update(Q, scheduled, E, E_avg):
    """``max(Q + s*E - E_avg, 0)``; broadcasts over devices."""
    return np.maximum(Q + np.where(scheduled, E, 0.0) - E_avg, 0.0)


def feasible_mask(f, n_target: int, cfg: SystemConfig) -> np.ndarray:
    t_tr = cfg.update_bits / surrogate_rate(n_target, cfg)
    return compute_time(np.asarray(f, dtype=float), cfg) + t_tr <= cfg.round_latency


def feasible_set(f, n_target: int, cfg: SystemConfig) -> np.ndarray:
    """Ids of devices whose compute time plus surrogate upload time fits the round."""
    return np.flatnonzero(feasible_mask(f, n_target, cfg))


def per_device_score(Q, f, importance, beta, n: int, cfg: SystemConfig):
    """Queue-weighted expected energy minus ``V`` times importance."""
    tx_energy = (cfg.eff_rx_power_P0 / beta) * cfg.update_bits / surrogate_rate(n, cfg)
    return Q * compute_energy(f, cfg) - cfg.tradeoff_V * importance + Q * tx_energy


@dataclass
class SchedulingDecision:
    feasible: np.ndarray
    scheduled: np.ndarray
    scores: np.ndarray  # aligned with ``feasible``
    importance: np.ndarray  # aligned with ``feasible``


def select_lowest(ids: np.ndarray, scores: np.ndarray, m: int, allow_shrink: bool = False) -> np.ndarray:
    order = np.lexsort((ids, scores))[:m]
    if allow_shrink:
        order = order[scores[order] <= 0]
    return np.sort(ids[order])


def schedule(feasible: np.ndarray, Q, f, importance, beta, n_target: int, cfg: SystemConfig) -> SchedulingDecision:
    """Pick the ``min(n_target, |feasible|)`` feasible devices with the smallest scores.

    ``Q``, ``f`` and ``beta`` are indexed by device id; ``importance`` is
    aligned with ``feasible``. Ties go to the lower id.
    """
    feasible = np.asarray(feasible, dtype=np.int64)
    importance = np.asarray(importance, dtype=float)
    if len(feasible) == 0:
        empty = np.zeros(0)
        return SchedulingDecision(feasible, feasible.copy(), empty, importance)
    Q, f, beta = (np.asarray(a, dtype=float)[feasible] for a in (Q, f, beta))
    scores = per_device_score(Q, f, importance, beta, n_target, cfg)
    m = min(n_target, len(feasible))
    chosen = select_lowest(feasible, scores, m, cfg.allow_shrink)
    return SchedulingDecision(feasible, chosen, scores, importance)


def _threshold(t_cmp, beta, n: int, cfg: SystemConfig):
    B = cfg.bandwidth
    c1 = 2.0 ** (cfg.update_bits * n / (B * (cfg.round_latency - t_cmp))) - 1.0
    return 3.0 * c1 * beta * B * cfg.noise_density / (n * cfg.eff_rx_power_P0)


def infeasible_after_training(devices, gain_sq, t_cmp, beta, cfg: SystemConfig) -> np.ndarray:
    """Subset of ``devices`` whose realized channel is too weak for the deadline.

    ``gain_sq``, ``t_cmp`` and ``beta`` are aligned with ``devices``; the
    threshold is evaluated with ``|devices|`` sharing the band.
    """
    devices = np.asarray(devices, dtype=np.int64)
    if len(devices) == 0:
        return devices
    thr = _threshold(np.asarray(t_cmp, float), np.asarray(beta, float), len(devices), cfg)
    return devices[np.asarray(gain_sq) < thr]


@dataclass
class PruneResult:
    kept: np.ndarray
    removed: list[tuple[int, str]] = field(default_factory=list)


def prune(devices, gain_sq, t_cmp, beta, cfg: SystemConfig) -> PruneResult:
    """Drop the weakest infeasible device, one at a time, until none is infeasible."""
    devices = np.asarray(devices, dtype=np.int64)
    gain_sq, t_cmp, beta = (np.asarray(a, dtype=float) for a in (gain_sq, t_cmp, beta))
    keep = np.ones(len(devices), dtype=bool)
    removed = []
    while keep.any():
        idx = np.flatnonzero(keep)
        thr = _threshold(t_cmp[idx], beta[idx], len(idx), cfg)
        bad = idx[gain_sq[idx] < thr]
        if len(bad) == 0:
            break
        norm = gain_sq[bad] / beta[bad]
        j = bad[np.lexsort((devices[bad], norm))[0]]
        keep[j] = False
        removed.append((int(devices[j]), f"gain_sq/beta={norm.min():.3g} below deadline threshold"))
    return PruneResult(devices[keep], removed)


def cardinality_for_ratio(ratio: float, num_devices: int) -> int:
    return max(1, int(round(ratio * num_devices)))


def realized_latency_ok(f, beta, gain_sq, n: int, cfg: SystemConfig) -> np.ndarray:
    """Whether each device finishes compute plus upload at ``rho = 1/n``."""
    p_tx = cfg.eff_rx_power_P0 / np.asarray(beta, float)
    rate = achievable_rate(1.0 / n, p_tx, np.asarray(gain_sq, float), cfg)
    with np.errstate(divide="ignore"):
        t_tr = cfg.update_bits / rate
    return compute_time(np.asarray(f, float), cfg) + t_tr <= cfg.round_latency
