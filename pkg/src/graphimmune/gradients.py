"""Analytic margin gradients w.r.t. adjacency entries, and the selection
scores built from them.

For the diffused margin ``m = (1 - a) * e_t (I - a P)^-1 r`` with
``P = D^-1 A``, the derivative w.r.t. a single adjacency entry has the
closed form

    dm/dA_ij = a * (1 - a) * (u_i / d_i) * (v_j - (P v)_i)

where ``u = e_t (I - a P)^-1`` (row solve) and ``v = (I - a P)^-1 r``
(column solve). The ``-(P v)_i`` part carries the dependence of the degree
normalization on ``A``; dropping it is a classic wrong-gradient trap and is
kept around only as a negative control for the finite-difference check.
Rows with zero degree use the self-redirect convention and get a zero
gradient row.

Two linear solves per (target-weighting, reward) pair replace differentiating
through the matrix inverse, and the row solve aggregates over any weighted
set of targets at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .certify import ImmuneMask
from .graph import Graph, PerturbationDelta
from .logits import Logits
from .ppr import PPRContext, transition_matrix


def _as_adjacency(g) -> np.ndarray:
    if isinstance(g, Graph):
        return g.adjacency.astype(np.float64)
    adj = np.asarray(g, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    return adj


@dataclass
class MetaGradient:
    """Gradient of the summed worst-case margins w.r.t. mask entries.

    ``edge_grad`` maps flip pairs to gradient entries (only pairs active in
    the perturbation delta can be nonzero); ``node_grad`` is the per-node
    gradient for node masks. Selection scores are the negated gradients.
    """

    edge_grad: dict
    node_grad: np.ndarray | None = None

    def edge_value(self) -> dict:
        return {pair: -g for pair, g in self.edge_grad.items()}

    def node_value(self) -> np.ndarray:
        if self.node_grad is None:
            raise ValueError("node gradient was not computed")
        return -self.node_grad


def _gradient_parts(adj, alpha, weights_row, r, drop_degree_term=False):
    """Shared factors of the closed form for one (weights, reward) pair.

    Returns ``(coef, v, pv)`` with ``coef_i = a(1-a) * u_i / d_i`` (zero on
    zero-degree rows) so that ``grad_ij = coef_i * (v_j - pv_i)``.
    """
    n = adj.shape[0]
    p = transition_matrix(adj)
    lu = scipy.linalg.lu_factor(np.eye(n) - alpha * p)
    v = scipy.linalg.lu_solve(lu, r)
    u = scipy.linalg.lu_solve(lu, weights_row, trans=1)
    deg = adj.sum(axis=1)
    coef = np.zeros(n)
    nz = deg > 0
    coef[nz] = alpha * (1.0 - alpha) * u[nz] / deg[nz]
    pv = np.zeros(n) if drop_degree_term else p @ v
    return coef, v, pv


def margin_adj_gradient(
    t: int,
    k: int,
    g,
    ctx: PPRContext,
    l: Logits,
    _drop_degree_term: bool = False,
) -> np.ndarray:
    """Dense gradient of node ``t``'s margin against class ``k`` w.r.t.
    every adjacency entry of the (possibly perturbed) graph ``g``.
    """
    adj = _as_adjacency(g)
    y = l.require_reference()
    n = adj.shape[0]
    if not (0 <= t < n and 0 <= k < l.k):
        raise ValueError(f"target {t} / class {k} out of range")
    if k == y[t]:
        return np.zeros((n, n))
    r = l.h[:, int(y[t])] - l.h[:, k]
    e = np.zeros(n)
    e[t] = 1.0
    coef, v, pv = _gradient_parts(adj, ctx.alpha, e, r, _drop_degree_term)
    return coef[:, None] * (v[None, :] - pv[:, None])


def _grouped_targets(targets, y, worst_classes):
    """Split targets into (reference class, worst class) groups."""
    groups = {}
    for t in targets:
        t = int(t)
        pair = (int(y[t]), int(worst_classes[t]))
        groups.setdefault(pair, []).append(t)
    return groups


def _oriented_delta_grad(adj, alpha, l, y, targets, worst_classes, delta, mask):
    """Per-orientation gradient entries of the summed margins on the
    delta's flips, chained through the flip signs. Skips protected pairs.
    """
    n = adj.shape[0]
    entries = {}  # ordered (i, j) -> gradient * sign
    flips = [
        (u, v, s)
        for u, v, s in sorted(delta.flips)
        if not mask.is_protected(u, v)
    ]
    if not flips:
        return entries
    for (c1, c2), members in sorted(_grouped_targets(targets, y, worst_classes).items()):
        weights = np.zeros(n)
        weights[members] = 1.0
        r = l.h[:, c1] - l.h[:, c2]
        coef, v, pv = _gradient_parts(adj, alpha, weights, r)
        for u, w, s in flips:
            g_uw = coef[u] * (v[w] - pv[u]) * s
            entries[(u, w)] = entries.get((u, w), 0.0) + g_uw
            if not delta.directed:
                g_wu = coef[w] * (v[u] - pv[w]) * s
                entries[(w, u)] = entries.get((w, u), 0.0) + g_wu
    return entries


def meta_gradient_edge(
    targets,
    g,
    worst_classes,
    delta: PerturbationDelta,
    mask: ImmuneMask,
    ctx: PPRContext,
    l: Logits,
) -> MetaGradient:
    """Gradient of the summed margins w.r.t. pair-mask entries.

    ``g`` must be the graph with the delta's unprotected flips applied; the
    chain rule through the mask multiplies the margin/adjacency gradient by
    the flip sign, summing both orientations for undirected deltas.
    Protected pairs report exactly zero.
    """
    adj = _as_adjacency(g)
    y = l.require_reference()
    oriented = _oriented_delta_grad(
        adj, ctx.alpha, l, y, targets, worst_classes, delta, mask
    )
    edge_grad = {}
    for (u, w), val in oriented.items():
        key = (u, w) if delta.directed else (min(u, w), max(u, w))
        edge_grad[key] = edge_grad.get(key, 0.0) + val
    return MetaGradient(edge_grad=edge_grad)


def meta_gradient_node(
    targets,
    g,
    worst_classes,
    delta: PerturbationDelta,
    mask: ImmuneMask,
    ctx: PPRContext,
    l: Logits,
) -> MetaGradient:
    """Gradient of the summed margins w.r.t. the 0/1 node-mask vector.

    With ``G`` the per-orientation pair gradient and ``m`` the current node
    vector (zero at protected nodes), the node gradient is
    ``(G + G^T) m``; protected nodes report exactly zero.
    """
    adj = _as_adjacency(g)
    y = l.require_reference()
    n = adj.shape[0]
    oriented = _oriented_delta_grad(
        adj, ctx.alpha, l, y, targets, worst_classes, delta, mask
    )
    m = np.ones(n)
    for v in mask.protected_nodes:
        m[v] = 0.0
    node_grad = np.zeros(n)
    for (u, w), val in oriented.items():
        node_grad[u] += val * m[w]
        node_grad[w] += val * m[u]
    for v in mask.protected_nodes:
        node_grad[v] = 0.0
    return MetaGradient(edge_grad={}, node_grad=node_grad)


def _relaxed_margin(adj, alpha, r, t):
    """Margin of node ``t`` on a real-valued adjacency (degrees = row sums)."""
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    p = np.zeros_like(adj)
    nz = deg != 0
    p[nz] = adj[nz] / deg[nz, None]
    zeros = np.flatnonzero(~nz)
    p[zeros, zeros] = 1.0
    v = np.linalg.solve(np.eye(n) - alpha * p, r)
    return (1.0 - alpha) * v[t]


def finite_diff_check(
    t: int,
    k: int,
    g,
    ctx: PPRContext,
    l: Logits,
    step: float = 1e-5,
    _drop_degree_term: bool = False,
) -> float:
    """Largest deviation between the analytic gradient and central finite
    differences of the continuous-relaxation margin, normalized by the
    largest finite-difference magnitude.

    Entries in zero-degree rows are skipped: the self-redirect convention
    makes the relaxed margin discontinuous there and the analytic gradient
    is fixed to zero. Returns 0.0 when both sides vanish everywhere.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    adj = _as_adjacency(g)
    y = l.require_reference()
    n = adj.shape[0]
    if k == y[t]:
        return 0.0
    analytic = margin_adj_gradient(t, k, adj, ctx, l, _drop_degree_term)
    r = l.h[:, int(y[t])] - l.h[:, k]
    deg = adj.sum(axis=1)
    fd = np.zeros((n, n))
    live = deg > 0
    for i in range(n):
        if not live[i]:
            continue
        for j in range(n):
            bumped = adj.copy()
            bumped[i, j] += step
            up = _relaxed_margin(bumped, ctx.alpha, r, t)
            bumped[i, j] -= 2 * step
            down = _relaxed_margin(bumped, ctx.alpha, r, t)
            fd[i, j] = (up - down) / (2 * step)
    scale = np.abs(fd[live]).max(initial=0.0)
    diff = np.abs(analytic[live] - fd[live]).max(initial=0.0)
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float(diff / 1e-12)
    return float(diff / scale)
