"""Per-node class scores that get diffused through the graph.

The propagation model takes a fixed score matrix ``h`` (one row per node,
one column per class), diffuses it with the PPR matrix, and classifies each
node by the argmax of its diffused row. ``h`` either comes from a CSV file
or from the small built-in linear softmax trainer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .graph import Graph
from .ppr import PPRContext, solver_for, transition_matrix, _power_value


class LogitsError(ValueError):
    """Raised for malformed score/feature files or shape mismatches."""


@dataclass(frozen=True)
class Logits:
    """Score matrix plus the per-node reference class used in margins."""

    h: np.ndarray
    y_ref: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] < 2:
            raise LogitsError(f"scores must be (n, k>=2), got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise LogitsError("scores contain non-finite entries")
        object.__setattr__(self, "h", h)
        if self.y_ref is not None:
            y = np.asarray(self.y_ref, dtype=np.int64)
            if y.shape != (h.shape[0],):
                raise LogitsError("reference classes must have one entry per node")
            if y.min() < 0 or y.max() >= h.shape[1]:
                raise LogitsError("reference class id out of range")
            object.__setattr__(self, "y_ref", y)

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def k(self) -> int:
        return self.h.shape[1]

    def with_reference(self, y_ref: np.ndarray) -> "Logits":
        return replace(self, y_ref=np.asarray(y_ref, dtype=np.int64))

    def require_reference(self) -> np.ndarray:
        if self.y_ref is None:
            raise LogitsError("reference classes not set; call reference_classes()")
        return self.y_ref


@dataclass(frozen=True)
class FeatureMatrix:
    """Raw node attributes with optional labels and a training mask."""

    x: np.ndarray
    labels: np.ndarray | None = None
    train_mask: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] < 1:
            raise LogitsError(f"features must be (n, d>=1), got {x.shape}")
        object.__setattr__(self, "x", x)
        if self.labels is not None:
            object.__setattr__(
                self, "labels", np.asarray(self.labels, dtype=np.int64)
            )
        if self.train_mask is not None:
            mask = np.asarray(self.train_mask, dtype=bool)
            if mask.shape != (x.shape[0],):
                raise LogitsError("train mask must have one entry per node")
            if self.labels is None:
                raise LogitsError("train mask given without labels")
            object.__setattr__(self, "train_mask", mask)


def _parse_numeric_csv(text: str, what: str) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        cells = body.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise LogitsError(
                f"line {lineno}: ragged row ({len(cells)} cells, expected {width})"
            )
        try:
            row = [float(c) for c in cells]
        except ValueError:
            raise LogitsError(f"line {lineno}: non-numeric cell in {what}")
        if not all(np.isfinite(row)):
            raise LogitsError(f"line {lineno}: non-finite value in {what}")
        rows.append(row)
    if not rows:
        raise LogitsError(f"empty {what}")
    return np.array(rows, dtype=np.float64)


def load_logits(text: str, k: int) -> Logits:
    """Parse an ``n x k`` numeric CSV into a score matrix (no reference set)."""
    h = _parse_numeric_csv(text, "score matrix")
    if h.shape[1] != k:
        raise LogitsError(f"expected {k} score columns, found {h.shape[1]}")
    return Logits(h)


def load_features(text: str) -> np.ndarray:
    """Parse an ``n x d`` numeric CSV attribute matrix."""
    return _parse_numeric_csv(text, "feature matrix")


def fit_linear_softmax(
    x: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    epochs: int,
    lr: float,
    seed: int,
):
    """Full-batch gradient descent on softmax cross-entropy.

    Returns ``(w, b, losses)`` where ``losses[e]`` is the training loss at
    the start of epoch ``e``. Deterministic for a fixed seed.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise LogitsError("empty training set")
    k = int(labels.max()) + 1
    if k < 2:
        k = 2
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=(x.shape[1], k))
    b = np.zeros(k)
    xm = x[mask]
    ym = labels[mask]
    onehot = np.zeros((xm.shape[0], k))
    onehot[np.arange(xm.shape[0]), ym] = 1.0
    losses = np.empty(epochs)
    for epoch in range(epochs):
        z = xm @ w + b
        z = z - z.max(axis=1, keepdims=True)
        expz = np.exp(z)
        prob = expz / expz.sum(axis=1, keepdims=True)
        losses[epoch] = -np.mean(np.log(prob[np.arange(xm.shape[0]), ym] + 1e-300))
        grad_z = (prob - onehot) / xm.shape[0]
        w = w - lr * (xm.T @ grad_z)
        b = b - lr * grad_z.sum(axis=0)
    return w, b, losses


def train_linear_logits(
    f: FeatureMatrix, epochs: int = 200, lr: float = 0.5, seed: int = 0
) -> Logits:
    """Train ``h = x @ w + b`` on the masked nodes and score every node."""
    if f.labels is None:
        raise LogitsError("training requires labels")
    mask = f.train_mask if f.train_mask is not None else np.ones(f.x.shape[0], bool)
    w, b, losses = fit_linear_softmax(f.x, f.labels, mask, epochs, lr, seed)
    if epochs > 1 and np.any(np.diff(losses) > 1e-12):
        warnings.warn(
            f"training loss increased at lr={lr}; consider a smaller step",
            RuntimeWarning,
            stacklevel=2,
        )
    return Logits(f.x @ w + b)


def diffused_scores(g: Graph, ctx: PPRContext, l: Logits) -> np.ndarray:
    """Diffuse the score matrix through the graph's PPR matrix."""
    if l.n != g.n:
        raise LogitsError(f"score matrix has {l.n} rows but graph has {g.n} nodes")
    if ctx.resolved_solver(g.n) == "dense":
        return (1.0 - ctx.alpha) * solver_for(g, ctx.alpha).solve(l.h)
    p = transition_matrix(g.adjacency)
    cols = [
        (1.0 - ctx.alpha) * _power_value(p, l.h[:, j], ctx.alpha, ctx.tol, ctx.max_iter)
        for j in range(l.k)
    ]
    return np.column_stack(cols)


def reference_classes(g: Graph, ctx: PPRContext, l: Logits) -> np.ndarray:
    """Clean-graph predicted class per node (ties go to the smallest id)."""
    return np.argmax(diffused_scores(g, ctx, l), axis=1).astype(np.int64)
