"""Corpora, per-device partitions and streaming arrival schedules."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
from scipy import stats

from .config import PartitionModel


class FormatError(ValueError):
    pass


class InfeasiblePartition(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """A labeled sample set: ``features`` is (n, feature_dim), ``labels`` is (n,)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


# ------------------------------------------------------------------ corpora

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    data = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, data[4:header])
    expected = int(np.prod(dims))
    if len(data) - header != expected:
        raise FormatError(f"{path}: header says {expected} bytes of data, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_corpus(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (MNIST layout); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"label {int(labels.max())} outside [0, {num_classes})")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of ``load_idx_corpus`` for uint8 arrays; used for fixtures and demos."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def class_means(num_classes: int, feature_dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Class centres with pairwise Euclidean distance exactly ``separation``.

    Scaled standard-basis vectors under a random rotation form a regular
    simplex. If there are fewer dimensions than classes the centres are random
    points on a sphere and the distances only hold on average.
    """
    radius = separation / np.sqrt(2.0)
    if feature_dim >= num_classes:
        q, r = np.linalg.qr(rng.standard_normal((feature_dim, feature_dim)))
        q *= np.sign(np.diag(r))
        return radius * q[:, :num_classes].T
    dirs = rng.standard_normal((num_classes, feature_dim))
    return radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def synth_corpus(num_classes: int, n: int, feature_dim: int, separation: float,
                 rng: np.random.Generator, means: np.ndarray | None = None) -> Dataset:
    """Balanced Gaussian blobs with unit noise around the class centres."""
    if means is None:
        means = class_means(num_classes, feature_dim, separation, rng)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    features = means[labels] + rng.standard_normal((n, feature_dim))
    return Dataset(features, labels.astype(np.int64), num_classes)


# ---------------------------------------------------------------- partition

def _shard_allocation(hist: np.ndarray, num_devices: int, per_device: int, m: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Integer (device, label) sample counts with <= m labels per device.

    Each device gets ``m`` label slots, dealt so every present label is owned
    by some device; the exact counts then come from an integer max-flow over
    the allowed (device, label) edges. Several slot layouts are tried before
    giving up.
    """
    present = np.flatnonzero(hist)
    if num_devices * m < len(present):
        raise InfeasiblePartition(
            f"{num_devices} devices x {m} labels cannot cover {len(present)} distinct labels")
    # slots per label proportional to its count, at least one each
    total_slots = num_devices * m
    share = hist[present] / hist.sum() * total_slots
    slots_per = np.maximum(np.floor(share).astype(int), 1)
    while slots_per.sum() < total_slots:
        slots_per[np.argmax(share - slots_per)] += 1
    while slots_per.sum() > total_slots:
        slots_per[np.argmax(np.where(slots_per > 1, slots_per - share, -np.inf))] -= 1
    for attempt in range(20):
        order = rng.permutation(len(present))
        if attempt % 2 == 0:
            # contiguous runs: neighbouring devices share a label, giving a chain
            slots = np.repeat(present[order], slots_per[order])
        else:
            slots = np.array([present[order[j % len(present)]] for j in range(num_devices * m)])
        allowed = [sorted(set(int(c) for c in slots[k * m:(k + 1) * m])) for k in range(num_devices)]
        # first try with per-edge caps to keep label shares balanced
        cap = -(-per_device // min(m, len(present)))
        for edge_cap in (cap, None):
            g = nx.DiGraph()
            for k, labels in enumerate(allowed):
                g.add_edge("src", ("d", k), capacity=per_device)
                for c in labels:
                    if edge_cap is None:
                        g.add_edge(("d", k), ("l", c))
                    else:
                        g.add_edge(("d", k), ("l", c), capacity=edge_cap)
            for c in present:
                g.add_edge(("l", int(c)), "sink", capacity=int(hist[c]))
            value, flow = nx.maximum_flow(g, "src", "sink")
            if value == num_devices * per_device:
                alloc = np.zeros((num_devices, len(hist)), dtype=np.int64)
                for k in range(num_devices):
                    for node, amount in flow[("d", k)].items():
                        alloc[k, node[1]] = amount
                return alloc
    raise InfeasiblePartition(f"cannot give every device {per_device} samples from <= {m} labels")


def partition(corpus: Dataset, model: PartitionModel, num_devices: int,
              rng: np.random.Generator) -> list[np.ndarray]:
    """Split corpus indices into ``num_devices`` disjoint equal-size groups.

    The corpus is shuffled and truncated to a multiple of ``num_devices``.
    Under ``shards(m)`` each group draws from at most ``m`` labels.
    """
    n = len(corpus) - len(corpus) % num_devices
    order = rng.permutation(len(corpus))[:n]
    per_device = n // num_devices
    if model.kind == "iid":
        return [np.sort(order[k * per_device:(k + 1) * per_device]) for k in range(num_devices)]

    labels = corpus.labels[order]
    hist = np.bincount(labels, minlength=corpus.num_classes)
    alloc = _shard_allocation(hist, num_devices, per_device, model.max_labels, rng)
    pools = {c: list(order[labels == c]) for c in range(corpus.num_classes)}
    out = []
    for k in range(num_devices):
        idx = []
        for c in np.flatnonzero(alloc[k]):
            take = int(alloc[k, c])
            idx.extend(pools[c][:take])
            del pools[c][:take]
        out.append(np.sort(np.asarray(idx, dtype=np.int64)))
    return out


# ---------------------------------------------------------------- streaming

@dataclass
class DeviceStream:
    """One device's samples in arrival order with nondecreasing timestamps.

    ``cum_hist[i]`` is the label histogram of the first ``i`` samples so any
    window histogram is a difference of two rows.
    """

    data: Dataset
    arrival_times: np.ndarray
    cursor: int = 0
    cum_hist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        onehot = np.zeros((len(self.data) + 1, self.data.num_classes), dtype=np.int64)
        onehot[np.arange(1, len(self.data) + 1), self.data.labels] = 1
        self.cum_hist = np.cumsum(onehot, axis=0)

    def __len__(self) -> int:
        return len(self.data)

    def count_until(self, t) -> int:
        return int(np.searchsorted(self.arrival_times, t, side="right"))

    def advance(self, t: float) -> None:
        self.cursor = max(self.cursor, self.count_until(t))

    def window_slice(self, t_lo: float, t_hi: float) -> slice:
        if t_lo > t_hi:
            raise ValueError("t_lo must not exceed t_hi")
        return slice(self.count_until(t_lo), self.count_until(t_hi))

    def window_hist(self, t_lo: float, t_hi: float) -> np.ndarray:
        s = self.window_slice(t_lo, t_hi)
        return self.cum_hist[s.stop] - self.cum_hist[s.start]


def digit_order(labels: np.ndarray, start: int, num_classes: int) -> np.ndarray:
    """Stable permutation that puts samples in cyclic label order from ``start``."""
    return np.argsort((labels - start) % num_classes, kind="stable")


def draw_arrival_times(n: int, model: str, total_time: float, rng: np.random.Generator,
                       sigma_frac: float = 0.1) -> np.ndarray:
    """Sorted arrival timestamps in (0, total_time]."""
    if model == "uniform":
        t = rng.uniform(0.0, total_time, size=n)
    elif model == "truncated_normal":
        mu = rng.uniform(0.0, total_time)
        sigma = sigma_frac * total_time
        a, b = (0.0 - mu) / sigma, (total_time - mu) / sigma
        t = stats.truncnorm.rvs(a, b, loc=mu, scale=sigma, size=n, random_state=rng)
    else:
        raise ValueError(f"unknown arrival model {model!r}")
    # timestamps of exactly 0 would never fall in a (lo, hi] window
    t = np.clip(t, np.nextafter(0.0, 1.0), total_time)
    return np.sort(t)


def assign_arrivals(device_data: Dataset, model: str, total_time: float, rng: np.random.Generator,
                    sigma_frac: float = 0.1) -> DeviceStream:
    """Order samples by digit starting from a random digit and attach timestamps."""
    if len(device_data) == 0:
        raise ValueError("device has no samples")
    start = int(rng.integers(device_data.num_classes))
    ordered = device_data.subset(digit_order(device_data.labels, start, device_data.num_classes))
    times = draw_arrival_times(len(ordered), model, total_time, rng, sigma_frac)
    return DeviceStream(ordered, times)


def arrived_between(stream: DeviceStream, t_lo: float, t_hi: float) -> Dataset:
    """Samples with arrival time in ``(t_lo, t_hi]``; does not move the cursor."""
    return stream.data.subset(stream.window_slice(t_lo, t_hi))


def available_at(stream: DeviceStream, t: float) -> Dataset:
    return arrived_between(stream, 0.0, t)
