"""Class-weighted multi-label binary cross-entropy."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .corpus import LabelCatalog

CLAMP = 1e-7


def compute_class_weights(catalog_or_counts) -> np.ndarray:
    """``w_r = sum(N) / N_r`` for every label."""
    counts = catalog_or_counts.counts if isinstance(catalog_or_counts, LabelCatalog) else catalog_or_counts
    n = np.asarray(counts, dtype=float)
    if n.ndim != 1 or n.size == 0:
        raise ValueError("need a non-empty count vector")
    if np.any(n <= 0):
        raise ValueError("every label count must be >= 1")
    return n.sum() / n


def encode_labels(label_sets: Iterable[Iterable[str]], catalog: LabelCatalog) -> np.ndarray:
    """Multi-hot ``(B, K)`` matrix in catalog order; unknown labels are ignored."""
    pos = {l: i for i, l in enumerate(catalog.labels)}
    rows = list(label_sets)
    y = np.zeros((len(rows), len(catalog)))
    for b, labels in enumerate(rows):
        for l in labels:
            if l in pos:
                y[b, pos[l]] = 1.0
    return y


def _check(probs, labels, weights):
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if probs.ndim != 2 or probs.shape != labels.shape or weights.shape != (probs.shape[1],):
        raise ValueError(f"shape mismatch: probs {probs.shape}, labels {labels.shape}, weights {weights.shape}")
    return probs, labels, weights


def weighted_bce(probs, labels, weights) -> float:
    """Batch mean of per-instance ``(1/K) sum_r -w_r [y log x + (1-y) log(1-x)]``."""
    probs, labels, weights = _check(probs, labels, weights)
    x = np.clip(probs, CLAMP, 1.0 - CLAMP)
    per = -weights * (labels * np.log(x) + (1.0 - labels) * np.log(1.0 - x))
    return float(per.mean())


def weighted_bce_grad(probs, labels, weights) -> np.ndarray:
    """d loss / d probs; zero where the clamp is active."""
    probs, labels, weights = _check(probs, labels, weights)
    B, K = probs.shape
    inside = (probs > CLAMP) & (probs < 1.0 - CLAMP)
    x = np.clip(probs, CLAMP, 1.0 - CLAMP)
    g = -weights * (labels / x - (1.0 - labels) / (1.0 - x)) / (B * K)
    return np.where(inside, g, 0.0)

