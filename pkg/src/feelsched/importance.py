"""Data-importance score of each candidate device.

The score adds the device's share of newly arrived samples among the
candidates and, after the first round, how far the label distribution of those
new samples is from the distribution of data already used in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANTS = ("combined", "amount_only", "distribution_only")


class EmptySet(ValueError):
    pass


@dataclass
class ImportanceInputs:
    """Per-candidate new-data counts and label histograms for one round.

    ``devices`` lists candidate ids; ``new_hists`` is (len(devices), C) and
    ``utilized_hist`` is the label histogram of all data consumed so far.
    """

    devices: np.ndarray
    new_hists: np.ndarray
    utilized_hist: np.ndarray
    round_index: int

    @property
    def new_counts(self) -> np.ndarray:
        return self.new_hists.sum(axis=1)


def feature_vector(hist) -> np.ndarray:
    """Mean-centred, mean-normalised histogram: ``(l - mean) / mean``."""
    hist = np.asarray(hist, dtype=float)
    total = hist.sum()
    if total <= 0:
        raise EmptySet("feature vector of an empty set")
    mean = total / len(hist)
    return (hist - mean) / mean


def dissimilarity(x, y) -> float:
    """``||x - y||^2 / (||x||^2 + ||y||^2)``, in [0, 2]; 0 when both are zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    denom = x @ x + y @ y
    if denom == 0.0:
        return 0.0
    diff = x - y
    return float(diff @ diff / denom)


def amount_term(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return np.zeros_like(counts)
    return len(counts) * counts / total


def distribution_term(inputs: ImportanceInputs) -> np.ndarray:
    out = np.zeros(len(inputs.devices))
    if inputs.round_index <= 1 or inputs.utilized_hist.sum() == 0:
        return out
    x = feature_vector(inputs.utilized_hist)
    for i, hist in enumerate(inputs.new_hists):
        if hist.sum() > 0:
            out[i] = dissimilarity(x, feature_vector(hist))
    return out


def importance(inputs: ImportanceInputs, variant: str = "combined") -> dict[int, float]:
    scores = importance_array(inputs, variant)
    return {int(k): float(v) for k, v in zip(inputs.devices, scores)}


def importance_array(inputs: ImportanceInputs, variant: str = "combined") -> np.ndarray:
    if variant == "amount_only":
        return amount_term(inputs.new_counts)
    if variant == "distribution_only":
        return distribution_term(inputs)
    if variant == "combined":
        return amount_term(inputs.new_counts) + distribution_term(inputs)
    raise ValueError(f"unknown importance variant {variant!r}")
