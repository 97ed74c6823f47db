"""Seeded synthetic instances for experiments and tests."""

from __future__ import annotations

import numpy as np

from .graph import Graph
from .logits import FeatureMatrix


def two_block_graph(
    n: int, p_in: float, p_out: float, seed: int = 0
) -> tuple[Graph, np.ndarray]:
    """Planted two-block random graph; returns the graph and block labels.

    Nodes split into two equal blocks; within-block pairs connect with
    probability ``p_in``, cross-block pairs with ``p_out``.
    """
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[n // 2 :] = 1
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if labels[i] == labels[j] else p_out
            if rng.random() < p:
                edges.append((i, j))
    return Graph(n, edges), labels


def block_features(
    labels: np.ndarray, dim: int = 16, separation: float = 1.0, seed: int = 0
) -> FeatureMatrix:
    """Gaussian features with class-dependent means, labels attached."""
    rng = np.random.default_rng(seed)
    k = int(labels.max()) + 1
    means = rng.normal(0.0, 1.0, size=(k, dim))
    means = separation * means / np.linalg.norm(means, axis=1, keepdims=True)
    x = means[labels] + rng.normal(0.0, 1.0, size=(len(labels), dim))
    return FeatureMatrix(x, labels=labels, train_mask=np.ones(len(labels), bool))


def two_block_instance(
    n: int = 300,
    p_in: float = 0.08,
    p_out: float = 0.02,
    dim: int = 16,
    separation: float = 2.0,
    seed: int = 0,
) -> tuple[Graph, FeatureMatrix]:
    """A seeded two-block graph plus trainable features for it."""
    g, labels = two_block_graph(n, p_in, p_out, seed)
    f = block_features(labels, dim, separation, seed + 1)
    return g, f
