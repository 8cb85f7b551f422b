"""Shared classifier, local SGD, and size-weighted aggregation.

Models are stateless: parameters live in a flat float64 vector and every
function takes it explicitly, so local updates never touch the global copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


class EmptyDataset(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SoftmaxLinear:
    feature_dim: int
    num_classes: int

    @property
    def dim(self) -> int:
        return self.feature_dim * self.num_classes + self.num_classes

    def init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.dim)

    def _unpack(self, theta):
        D, C = self.feature_dim, self.num_classes
        return theta[: C * D].reshape(C, D), theta[C * D:]

    def logits(self, theta, X):
        W, b = self._unpack(theta)
        return X @ W.T + b

    def loss_and_grad(self, theta, X, y):
        W, _ = self._unpack(theta)
        p, loss = _softmax_xent(self.logits(theta, X), y)
        g = p
        g[np.arange(len(y)), y] -= 1.0
        g /= len(y)
        return loss, np.concatenate([(g.T @ X).ravel(), g.sum(axis=0)])


@dataclass(frozen=True)
class MLP:
    """One tanh hidden layer followed by a softmax output."""

    feature_dim: int
    num_classes: int
    hidden: int = 64

    @property
    def dim(self) -> int:
        D, H, C = self.feature_dim, self.hidden, self.num_classes
        return H * D + H + C * H + C

    def init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng or np.random.default_rng(0)
        D, H, C = self.feature_dim, self.hidden, self.num_classes
        W1 = rng.standard_normal((H, D)) / np.sqrt(D)
        W2 = rng.standard_normal((C, H)) / np.sqrt(H)
        return np.concatenate([W1.ravel(), np.zeros(H), W2.ravel(), np.zeros(C)])

    def _unpack(self, theta):
        D, H, C = self.feature_dim, self.hidden, self.num_classes
        i = 0
        W1 = theta[i:i + H * D].reshape(H, D); i += H * D
        b1 = theta[i:i + H]; i += H
        W2 = theta[i:i + C * H].reshape(C, H); i += C * H
        return W1, b1, W2, theta[i:]

    def logits(self, theta, X):
        W1, b1, W2, b2 = self._unpack(theta)
        return np.tanh(X @ W1.T + b1) @ W2.T + b2

    def loss_and_grad(self, theta, X, y):
        W1, b1, W2, b2 = self._unpack(theta)
        h = np.tanh(X @ W1.T + b1)
        p, loss = _softmax_xent(h @ W2.T + b2, y)
        g = p
        g[np.arange(len(y)), y] -= 1.0
        g /= len(y)
        gh = (g @ W2) * (1.0 - h * h)
        return loss, np.concatenate([(gh.T @ X).ravel(), gh.sum(axis=0), (g.T @ h).ravel(), g.sum(axis=0)])


def _softmax_xent(z, y):
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(len(y)), y].mean()
    return np.exp(logp), float(loss)


def make_model(arch: str, feature_dim: int, num_classes: int, hidden: int = 64):
    if arch == "softmax":
        return SoftmaxLinear(feature_dim, num_classes)
    if arch == "mlp":
        return MLP(feature_dim, num_classes, hidden)
    raise ValueError(f"unknown model architecture {arch!r}")


@dataclass(frozen=True)
class SgdConfig:
    local_steps: int = 5
    batch_size: int = 32
    learning_rate: float = 0.05


@dataclass(frozen=True)
class LocalUpdate:
    delta: np.ndarray
    data_size: int


def local_train(model, theta: np.ndarray, data: Dataset, sgd: SgdConfig,
                rng: np.random.Generator) -> LocalUpdate:
    """Run ``local_steps`` mini-batch SGD steps from ``theta``; return the change."""
    if len(data) == 0:
        raise EmptyDataset("local training needs at least one sample")
    w = theta.copy()
    for _ in range(sgd.local_steps):
        idx = rng.integers(len(data), size=sgd.batch_size)
        _, grad = model.loss_and_grad(w, data.features[idx], data.labels[idx])
        w -= sgd.learning_rate * grad
    return LocalUpdate(w - theta, len(data))


def aggregation_weights(sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    return sizes / sizes.sum()


def aggregate(theta: np.ndarray, updates: list[LocalUpdate]) -> np.ndarray:
    """``theta + sum_k |S_k| / sum_j |S_j| * delta_k``; no updates leaves theta as is."""
    if not updates:
        return theta.copy()
    for u in updates:
        if u.delta.shape != theta.shape:
            raise DimensionMismatch(f"update of shape {u.delta.shape} for model {theta.shape}")
    w = aggregation_weights([u.data_size for u in updates])
    return theta + sum(wk * u.delta for wk, u in zip(w, updates))


def evaluate(model, theta: np.ndarray, data: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy."""
    if len(data) == 0:
        raise EmptyDataset("cannot evaluate on an empty set")
    z = model.logits(theta, data.features)
    _, loss = _softmax_xent(z, data.labels)
    return loss, float(np.mean(z.argmax(axis=1) == data.labels))
