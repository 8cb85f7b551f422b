"""Round-by-round simulation of scheduled federated training.

Each round: draw CPU speeds, filter feasible devices, score and schedule,
train locally, draw channels for the scheduled devices, prune the ones that
cannot upload in time, charge energy, update the virtual queues and aggregate
the survivors' updates.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import SystemConfig, to_dict, validate
from .data import (Dataset, DeviceStream, assign_arrivals, available_at, class_means,
                   load_idx_corpus, partition, synth_corpus)
from .importance import VARIANTS, ImportanceInputs, importance_array
from .learner import LocalUpdate, SgdConfig, aggregate, evaluate, local_train, make_model
from .physics import (achievable_rate, compute_energy, compute_time, draw_channel, draw_cpu_freq,
                      draw_fading_factors, transmission, tx_power_for)
from .scheduler import feasible_set, per_device_score, prune, queue_update, schedule


def rng_for(seed: int, purpose: str, device: int = 0, round_index: int = 0) -> np.random.Generator:
    """Independent generator keyed by ``(seed, purpose, device, round)``.

    Draws for one key never depend on how many draws were made for another,
    so reordering independent work cannot change a run.
    """
    key = [int(seed), zlib.crc32(purpose.encode()), int(device), int(round_index)]
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass(frozen=True)
class SchedulerKind:
    kind: str = "proposed"
    variant: str = "combined"

    @classmethod
    def parse(cls, text: str) -> "SchedulerKind":
        name, _, variant = text.partition(":")
        if name in ("random", "random_feasible") and not variant:
            return cls("random_feasible")
        if name == "proposed" and (variant or "combined") in VARIANTS:
            return cls("proposed", variant or "combined")
        raise ValueError(f"unknown scheduler {text!r}")

    def __str__(self) -> str:
        if self.kind == "random_feasible":
            return "random"
        return "proposed" if self.variant == "combined" else f"proposed:{self.variant}"


@dataclass
class RoundLog:
    """Everything that happened in one round; per-device arrays have length K.

    Quantities that do not apply to a device in this round are NaN
    (importance and score outside the feasible set, channel and upload time
    for devices that did not upload).
    """

    round: int
    feasible: np.ndarray
    scheduled: np.ndarray
    transmitted: np.ndarray
    data_size: np.ndarray
    new_data: np.ndarray
    importance: np.ndarray
    score: np.ndarray
    q_before: np.ndarray
    q_after: np.ndarray
    f: np.ndarray
    beta: np.ndarray
    gain_sq: np.ndarray
    t_cmp: np.ndarray
    t_tr: np.ndarray
    e_cmp: np.ndarray
    e_tr: np.ndarray
    energy: np.ndarray
    test_loss: float = math.nan
    test_accuracy: float = math.nan
    train_loss: float = math.nan
    cum_mean_energy: float = 0.0
    pruned: list = field(default_factory=list)

    @property
    def num_devices(self) -> int:
        return len(self.energy)


DEVICE_COLUMNS = ("round", "device", "feasible", "scheduled", "transmitted", "data_size", "new_data",
                  "importance", "score", "q_before", "q_after", "f_hz", "beta", "gain_sq",
                  "t_cmp", "t_tr", "e_cmp", "e_tr", "energy")
ROUND_COLUMNS = ("round", "n_feasible", "n_scheduled", "n_transmitted", "test_loss", "test_accuracy",
                 "train_loss", "round_mean_energy", "cum_mean_energy", "max_queue")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def device_rows(log: RoundLog):
    sets = [np.isin(np.arange(log.num_devices), s) for s in (log.feasible, log.scheduled, log.transmitted)]
    for k in range(log.num_devices):
        yield [_fmt(v) for v in (
            log.round, k, sets[0][k], sets[1][k], sets[2][k], log.data_size[k], log.new_data[k],
            log.importance[k], log.score[k], log.q_before[k], log.q_after[k], log.f[k], log.beta[k],
            log.gain_sq[k], log.t_cmp[k], log.t_tr[k], log.e_cmp[k], log.e_tr[k], log.energy[k])]


def round_row(log: RoundLog):
    return [_fmt(v) for v in (
        log.round, len(log.feasible), len(log.scheduled), len(log.transmitted), log.test_loss,
        log.test_accuracy, log.train_loss, log.energy.mean(), log.cum_mean_energy, log.q_after.max())]


class RunWriter:
    """Appends ``devices.csv`` and ``rounds.csv`` one round at a time."""

    def __init__(self, out_dir, cfg: SystemConfig, scheduler: SchedulerKind):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {"config": to_dict(cfg), "seed": cfg.seed, "scheduler": str(scheduler),
                    "code_version": __version__}
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self._files = [open(self.out_dir / name, "w", newline="") for name in ("devices.csv", "rounds.csv")]
        self._dev, self._rnd = (csv.writer(f) for f in self._files)
        self._dev.writerow(DEVICE_COLUMNS)
        self._rnd.writerow(ROUND_COLUMNS)

    def write(self, log: RoundLog) -> None:
        self._dev.writerows(device_rows(log))
        self._rnd.writerow(round_row(log))
        for f in self._files:
            f.flush()

    def close(self) -> None:
        for f in self._files:
            f.close()


@dataclass
class Environment:
    """Static per-run world: streams, fading factors, test data, model."""

    streams: list[DeviceStream]
    beta: np.ndarray
    test_set: Dataset
    model: object
    theta0: np.ndarray


def load_corpora(cfg: SystemConfig) -> tuple[Dataset, Dataset]:
    if cfg.idx_train_images:
        train = load_idx_corpus(cfg.idx_train_images, cfg.idx_train_labels, cfg.num_classes)
        test = load_idx_corpus(cfg.idx_test_images, cfg.idx_test_labels, cfg.num_classes)
        return train, test
    rng = rng_for(cfg.seed, "corpus")
    means = class_means(cfg.num_classes, cfg.feature_dim, cfg.class_separation, rng)
    train = synth_corpus(cfg.num_classes, cfg.corpus_size, cfg.feature_dim, cfg.class_separation, rng, means)
    test = synth_corpus(cfg.num_classes, cfg.test_size, cfg.feature_dim, cfg.class_separation, rng, means)
    return train, test


def build_environment(cfg: SystemConfig, corpora: tuple[Dataset, Dataset] | None = None) -> Environment:
    train, test = corpora or load_corpora(cfg)
    groups = partition(train, cfg.partition_model, cfg.num_devices, rng_for(cfg.seed, "partition"))
    streams = [assign_arrivals(train.subset(g), cfg.arrival_model, cfg.total_time,
                               rng_for(cfg.seed, "arrival", k), cfg.arrival_sigma_frac)
               for k, g in enumerate(groups)]
    beta = draw_fading_factors(cfg, rng_for(cfg.seed, "fading"), size=cfg.num_devices)
    model = make_model(cfg.model_arch, train.feature_dim, train.num_classes, cfg.hidden_units)
    return Environment(streams, beta, test, model, model.init(rng_for(cfg.seed, "init")))


def run(cfg: SystemConfig, scheduler: SchedulerKind | str = SchedulerKind(), out_dir=None,
        env: Environment | None = None) -> list[RoundLog]:
    """Simulate ``cfg.total_rounds`` rounds and return one ``RoundLog`` per round."""
    validate(cfg)
    if isinstance(scheduler, str):
        scheduler = SchedulerKind.parse(scheduler)
    env = env or build_environment(cfg)
    writer = RunWriter(out_dir, cfg, scheduler) if out_dir is not None else None
    K, T_rd = cfg.num_devices, cfg.round_latency
    n_target = cfg.sched_cardinality
    sgd = SgdConfig(cfg.local_steps, cfg.batch_size, cfg.learning_rate)
    variant = scheduler.variant if scheduler.kind == "proposed" else "combined"

    theta = env.theta0.copy()
    Q = np.zeros(K)
    last_used = np.zeros(K, dtype=np.int64)  # round whose data last entered the model; 0 = never
    cum_energy = 0.0
    logs = []
    try:
        for t in range(1, cfg.total_rounds + 1):
            now = t * T_rd
            f = draw_cpu_freq(cfg, rng_for(cfg.seed, "cpu", 0, t), size=K)
            feasible = feasible_set(f, n_target, cfg)

            counts_now = np.array([s.count_until(now) for s in env.streams])
            if cfg.importance_window == "per_round":
                lo = np.full(K, (t - 1) * T_rd)
            else:
                lo = last_used * T_rd
            counts_lo = np.array([s.count_until(x) for s, x in zip(env.streams, lo)])
            new_hists = np.zeros((len(feasible), env.test_set.num_classes), dtype=np.int64)
            for i, k in enumerate(feasible):
                new_hists[i] = env.streams[k].cum_hist[counts_now[k]] - env.streams[k].cum_hist[counts_lo[k]]
            used_counts = [s.count_until(r * T_rd) for s, r in zip(env.streams, last_used)]
            utilized = sum(s.cum_hist[c] for s, c in zip(env.streams, used_counts))
            imp = importance_array(ImportanceInputs(feasible, new_hists, utilized, t), variant)

            if scheduler.kind == "proposed":
                decision = schedule(feasible, Q, f, imp, env.beta, n_target, cfg)
                scores, scheduled = decision.scores, decision.scheduled
            else:
                scores = per_device_score(Q[feasible], f[feasible], imp, env.beta[feasible], n_target, cfg)
                m = min(n_target, len(feasible))
                pick = rng_for(cfg.seed, "random_sched", 0, t).choice(len(feasible), size=m, replace=False)
                scheduled = np.sort(feasible[pick])

            updates = {}
            if cfg.train_model:
                for k in scheduled:
                    data = available_at(env.streams[k], now)
                    if len(data):
                        updates[k] = local_train(env.model, theta, data, sgd, rng_for(cfg.seed, "sgd", k, t))

            gain_sq = np.full(K, np.nan)
            for k in scheduled:
                gain_sq[k] = draw_channel(env.beta[k], rng_for(cfg.seed, "channel", k, t))
            t_cmp = compute_time(f, cfg)
            pr = prune(scheduled, gain_sq[scheduled], t_cmp[scheduled], env.beta[scheduled], cfg)
            kept = pr.kept

            e_cmp = np.zeros(K)
            e_cmp[scheduled] = compute_energy(f[scheduled], cfg)
            e_tr = np.zeros(K)
            t_tr = np.full(K, np.nan)
            if len(kept):
                p_tx = tx_power_for(env.beta[kept], cfg)
                rate = achievable_rate(1.0 / len(kept), p_tx, gain_sq[kept], cfg)
                t_tr[kept], e_tr[kept] = transmission(rate, p_tx, cfg)
            energy = e_cmp + e_tr

            s = np.zeros(K, dtype=bool)
            s[scheduled] = True
            q_after = queue_update(Q, s, energy, cfg.avg_energy)

            agg = [updates[k] for k in kept if k in updates]
            theta = aggregate(theta, agg)
            last_used[kept] = t

            cum_energy += energy.sum()
            imp_full = np.full(K, np.nan)
            imp_full[feasible] = imp
            score_full = np.full(K, np.nan)
            score_full[feasible] = scores
            log = RoundLog(
                round=t, feasible=feasible, scheduled=scheduled, transmitted=kept,
                data_size=counts_now, new_data=counts_now - counts_lo, importance=imp_full,
                score=score_full, q_before=Q, q_after=q_after, f=f, beta=env.beta, gain_sq=gain_sq,
                t_cmp=t_cmp, t_tr=t_tr, e_cmp=e_cmp, e_tr=e_tr, energy=energy,
                cum_mean_energy=cum_energy / (K * t), pruned=pr.removed,
            )
            if cfg.train_model and (t % cfg.eval_every == 0 or t == cfg.total_rounds):
                log.test_loss, log.test_accuracy = evaluate(env.model, theta, env.test_set)
                current = _union_available(env.streams, counts_now)
                if current is not None:
                    log.train_loss, _ = evaluate(env.model, theta, current)
            Q = q_after
            logs.append(log)
            if writer:
                writer.write(log)
    finally:
        if writer:
            writer.close()
    return logs


def _union_available(streams, counts) -> Dataset | None:
    parts = [s.data.subset(slice(0, c)) for s, c in zip(streams, counts) if c]
    if not parts:
        return None
    return Dataset(np.concatenate([p.features for p in parts]), np.concatenate([p.labels for p in parts]),
                   parts[0].num_classes)


def summarize(logs: list[RoundLog], window: int | None = None) -> dict:
    """Time-averaged per-device energy, accuracy, queue maxima, scheduling counts.

    ``window`` restricts rolling quantities to the last ``window`` rounds.
    """
    if not logs:
        raise ValueError("no rounds to summarize")
    tail = logs[-window:] if window else logs
    energy = np.array([log.energy for log in logs])
    acc = [log.test_accuracy for log in tail if not math.isnan(log.test_accuracy)]
    counts = np.zeros(logs[0].num_devices, dtype=np.int64)
    tx_counts = np.zeros_like(counts)
    for log in logs:
        counts[log.scheduled] += 1
        tx_counts[log.transmitted] += 1
    final = next((log for log in reversed(logs) if not math.isnan(log.test_accuracy)), None)
    return {
        "rounds": len(logs),
        "mean_energy_per_device": float(energy.mean()),
        "window_mean_energy_per_device": float(np.array([log.energy for log in tail]).mean()),
        "final_accuracy": final.test_accuracy if final else math.nan,
        "final_loss": final.test_loss if final else math.nan,
        "window_mean_accuracy": float(np.mean(acc)) if acc else math.nan,
        "max_queue": float(max(log.q_after.max() for log in logs)),
        "final_max_queue": float(logs[-1].q_after.max()),
        "scheduled_counts": counts.tolist(),
        "transmitted_counts": tx_counts.tolist(),
        "pruned_total": int(sum(len(log.pruned) for log in logs)),
    }
