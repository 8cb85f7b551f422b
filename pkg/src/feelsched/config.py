"""System constants, experiment knobs, and the flat key=value config format.

All physical quantities are SI. The received-power reference ``P0`` is held
in watts; dBm only appears when reading or writing config text.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a config value is malformed or violates an invariant."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) / 1000.0


def watts_to_dbm(p_w: float) -> float:
    return 10.0 * math.log10(p_w * 1000.0)


def db_to_linear(x_db):
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


ARRIVAL_MODELS = ("truncated_normal", "uniform")
IMPORTANCE_WINDOWS = ("since_scheduled", "per_round")


@dataclass(frozen=True)
class PartitionModel:
    """``iid`` or ``shards`` with at most ``max_labels`` classes per device."""

    kind: str = "iid"
    max_labels: int | None = None

    @classmethod
    def parse(cls, text: str) -> "PartitionModel":
        text = text.strip()
        if text == "iid":
            return cls("iid")
        m = re.fullmatch(r"shards\((\d+)\)", text)
        if m:
            return cls("shards", int(m.group(1)))
        raise ConfigError("partition_model", f"expected 'iid' or 'shards(m)', got {text!r}")

    def __str__(self) -> str:
        return "iid" if self.kind == "iid" else f"shards({self.max_labels})"


@dataclass(frozen=True)
class SystemConfig:
    # physical constants (defaults: the reference setup, K=40)
    num_devices: int = 40
    model_dim: int = 21840
    bandwidth: float = 20e6
    noise_density: float = 1e-13
    eff_rx_power_P0: float = dbm_to_watts(28.0)
    power_coeff: float = 1e-27
    cycles_c: float | None = None  # None -> 600 * 32 * model_dim
    update_bits: float | None = None  # None -> 32 * model_dim
    round_latency: float = 4.0
    avg_energy: float = 0.0005
    # scheduler
    tradeoff_V: float = 0.05
    rate_margin: float = 0.8
    sched_cardinality: int = 2
    allow_shrink: bool = False
    importance_window: str = "since_scheduled"
    # per-round randomness
    cpu_freq_range: tuple[float, float] = (0.02e9, 1.52e9)
    fading_dB_range: tuple[float, float] = (-5.0, 3.0)
    # data
    arrival_model: str = "truncated_normal"
    arrival_sigma_frac: float = 0.1
    partition_model: PartitionModel = field(default_factory=PartitionModel)
    num_classes: int = 10
    feature_dim: int = 20
    corpus_size: int = 6000
    test_size: int = 2000
    class_separation: float = 4.0
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    # learner
    model_arch: str = "softmax"
    hidden_units: int = 64
    local_steps: int = 5
    batch_size: int = 32
    learning_rate: float = 0.05
    train_model: bool = True
    eval_every: int = 1
    # run
    total_rounds: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.cycles_c is None:
            object.__setattr__(self, "cycles_c", 600.0 * 32.0 * self.model_dim)
        if self.update_bits is None:
            object.__setattr__(self, "update_bits", 32.0 * self.model_dim)
        if isinstance(self.partition_model, str):
            object.__setattr__(self, "partition_model", PartitionModel.parse(self.partition_model))
        object.__setattr__(self, "cpu_freq_range", tuple(float(v) for v in self.cpu_freq_range))
        object.__setattr__(self, "fading_dB_range", tuple(float(v) for v in self.fading_dB_range))

    @property
    def total_time(self) -> float:
        """Length of the simulated time axis: every round consumes ``round_latency``."""
        return self.total_rounds * self.round_latency

    def replace(self, **changes: Any) -> "SystemConfig":
        # derived defaults must be recomputed when model_dim changes
        if "model_dim" in changes:
            for key, factor in (("cycles_c", 600.0 * 32.0), ("update_bits", 32.0)):
                if key not in changes and getattr(self, key) == factor * self.model_dim:
                    changes[key] = None
        return dataclasses.replace(self, **changes)


def validate(cfg: SystemConfig) -> SystemConfig:
    """Check every invariant; raise ``ConfigError`` naming the first bad field."""

    def positive(name):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ConfigError(name, f"must be finite and > 0, got {v!r}")

    for name in ("num_devices", "model_dim"):
        if not isinstance(getattr(cfg, name), int):
            raise ConfigError(name, "must be an integer")
    for name in ("num_devices", "model_dim", "bandwidth", "noise_density", "eff_rx_power_P0",
                 "power_coeff", "cycles_c", "update_bits", "round_latency", "avg_energy"):
        positive(name)
    if not (math.isfinite(cfg.tradeoff_V) and cfg.tradeoff_V >= 0):
        raise ConfigError("tradeoff_V", "must be >= 0")
    if not (0.0 < cfg.rate_margin <= 1.0):
        raise ConfigError("rate_margin", f"must lie in (0, 1], got {cfg.rate_margin!r}")
    if not (isinstance(cfg.sched_cardinality, int) and 1 <= cfg.sched_cardinality <= cfg.num_devices):
        raise ConfigError("sched_cardinality", f"must be an integer in [1, {cfg.num_devices}]")
    if cfg.importance_window not in IMPORTANCE_WINDOWS:
        raise ConfigError("importance_window", f"must be one of {IMPORTANCE_WINDOWS}")
    f_lo, f_hi = cfg.cpu_freq_range
    if not (0 < f_lo <= f_hi and math.isfinite(f_hi)):
        raise ConfigError("cpu_freq_range", "need 0 < f_lo <= f_hi")
    if cfg.cycles_c / f_hi >= cfg.round_latency:
        raise ConfigError(
            "cpu_freq_range",
            f"fastest CPU needs {cfg.cycles_c / f_hi:.4g} s >= round_latency {cfg.round_latency} s",
        )
    b_lo, b_hi = cfg.fading_dB_range
    if not (math.isfinite(b_lo) and math.isfinite(b_hi) and b_lo <= b_hi):
        raise ConfigError("fading_dB_range", "need finite lo <= hi")
    if cfg.arrival_model not in ARRIVAL_MODELS:
        raise ConfigError("arrival_model", f"must be one of {ARRIVAL_MODELS}")
    positive("arrival_sigma_frac")
    pm = cfg.partition_model
    if pm.kind == "shards" and not (pm.max_labels and pm.max_labels >= 1):
        raise ConfigError("partition_model", "shards(m) needs m >= 1")
    for name in ("num_classes", "feature_dim", "corpus_size", "test_size", "local_steps",
                 "batch_size", "total_rounds", "eval_every", "hidden_units"):
        v = getattr(cfg, name)
        if not (isinstance(v, int) and v >= 1):
            raise ConfigError(name, "must be a positive integer")
    if cfg.corpus_size < cfg.num_devices:
        raise ConfigError("corpus_size", "must be at least num_devices")
    if cfg.model_arch not in ("softmax", "mlp"):
        raise ConfigError("model_arch", "must be 'softmax' or 'mlp'")
    if not (cfg.learning_rate >= 0 and math.isfinite(cfg.learning_rate)):
        raise ConfigError("learning_rate", "must be >= 0")
    if cfg.class_separation < 0:
        raise ConfigError("class_separation", "must be >= 0")
    idx = [cfg.idx_train_images, cfg.idx_train_labels, cfg.idx_test_images, cfg.idx_test_labels]
    if any(idx) and not all(idx):
        raise ConfigError("idx_train_images", "either all four idx_* paths are set or none")
    if not (isinstance(cfg.seed, int) and 0 <= cfg.seed < 2**64):
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    return cfg


# ---------------------------------------------------------------- text format

_FIELDS = {f.name: f for f in dataclasses.fields(SystemConfig)}


def _parse_value(key: str, text: str) -> Any:
    text = text.strip()
    try:
        if key == "eff_rx_power_P0":
            return dbm_to_watts(float(text))
        if key in ("cpu_freq_range", "fading_dB_range"):
            lo, hi = (float(v) for v in text.split(","))
            return (lo, hi)
        if key == "partition_model":
            return PartitionModel.parse(text)
        default = _FIELDS[key].default
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return float(text)
        return text
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(key, f"cannot parse value {text!r}") from None


def parse_assignments(lines, base: SystemConfig | None = None) -> SystemConfig:
    """Apply ``key = value`` lines (``#`` starts a comment) on top of ``base``."""
    changes: dict[str, Any] = {}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, "expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(key, "unknown config key")
        changes[key] = _parse_value(key, value)
    return (base or SystemConfig()).replace(**changes)


def load_config(path, overrides=()) -> SystemConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"no such file: {path}")
    cfg = parse_assignments(path.read_text().splitlines())
    return validate(parse_assignments(overrides, cfg))


def to_text(cfg: SystemConfig) -> str:
    """Serialize in the same format ``load_config`` reads (round-trips exactly)."""
    out = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if name == "eff_rx_power_P0":
            v = repr(watts_to_dbm(v))
        elif isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{name} = {v}")
    return "\n".join(out) + "\n"


def to_dict(cfg: SystemConfig) -> dict[str, Any]:
    d = dataclasses.asdict(cfg)
    d["partition_model"] = str(cfg.partition_model)
    d["eff_rx_power_P0_dBm"] = watts_to_dbm(cfg.eff_rx_power_P0)
    return d
