"""Reference immunization heuristics and similarity metrics.

These selectors protect pairs/nodes by randomness, knowledge of the attack,
attribute similarity, or structural importance. They share the mask format
with the greedy immunizers and serve as comparison points; the similarity
metrics double as the case-study report statistics.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .certify import ImmuneMask
from .graph import Graph, PerturbationDelta

EDGE_KINDS = ("random", "attack-random", "jaccard", "cosine", "bridgeness")
NODE_KINDS = EDGE_KINDS + ("betweenness",)

_NONEDGE_POOL_FACTOR = 50


@dataclass
class SimilarityScores:
    """Scores of one similarity metric over pairs and/or nodes."""

    metric: str
    pair_scores: dict | None = None
    node_scores: np.ndarray | None = None


def attribute_similarity(x: np.ndarray, u: int, v: int, kind: str) -> float:
    """Attribute similarity of two nodes in [0, 1].

    ``jaccard`` binarizes features at > 0; ``cosine`` clips negative values
    of the cosine to 0 so real-valued features stay in range.
    """
    if kind == "jaccard":
        a = x[u] > 0
        b = x[v] > 0
        union = np.logical_or(a, b).sum()
        if union == 0:
            return 0.0
        return float(np.logical_and(a, b).sum() / union)
    if kind == "cosine":
        na = np.linalg.norm(x[u])
        nb = np.linalg.norm(x[v])
        if na == 0 or nb == 0:
            return 0.0
        return float(max(float(x[u] @ x[v]) / (na * nb), 0.0))
    raise ValueError(f"unknown attribute similarity {kind!r}")


def neighbor_jaccard(g: Graph, u: int, v: int) -> float:
    """Jaccard similarity of the two nodes' neighborhoods ("bridgeness")."""
    a = g.adjacency[u].astype(bool)
    b = g.adjacency[v].astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def betweenness_centrality(g: Graph) -> np.ndarray:
    """Exact shortest-path betweenness via breadth-first accumulation."""
    n = g.n
    bc = np.zeros(n)
    for s in range(n):
        stack = []
        preds = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in g.neighbors(v):
                w = int(w)
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc / 2.0  # each undirected path counted from both endpoints


def _all_pairs(n: int):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _sample_nonedges(g: Graph, count: int, rng) -> list:
    nonedges = [
        (i, j)
        for i in range(g.n)
        for j in range(i + 1, g.n)
        if not g.adjacency[i, j]
    ]
    if len(nonedges) <= count:
        return nonedges
    idx = rng.choice(len(nonedges), size=count, replace=False)
    return [nonedges[i] for i in sorted(idx)]


def _top(pool, budget):
    """First ``budget`` items of an already-ordered candidate pool."""
    return pool[: max(budget, 0)]


def _similarity_edge_selection(g, features, labels, budget, kind, seed):
    """Keep high-similarity same-label edges, block low-similarity
    cross-label non-edges, splitting the budget half/half (edges rounded
    up). Shortfalls in one pool spill into the other."""
    rng = np.random.default_rng(seed)
    if kind == "bridgeness":
        score = lambda u, v: neighbor_jaccard(g, u, v)
        edge_pool = g.edges()
        nonedge_pool = _sample_nonedges(g, _NONEDGE_POOL_FACTOR * budget, rng)
    else:
        if features is None or labels is None:
            raise ValueError(f"{kind} baseline needs features and labels")
        score = lambda u, v: attribute_similarity(features, u, v, kind)
        edge_pool = [(u, v) for u, v in g.edges() if labels[u] == labels[v]]
        nonedge_pool = [
            (u, v)
            for u, v in _sample_nonedges(g, _NONEDGE_POOL_FACTOR * budget, rng)
            if labels[u] != labels[v]
        ]
    edge_ranked = sorted(edge_pool, key=lambda p: (-score(*p), p))
    nonedge_ranked = sorted(nonedge_pool, key=lambda p: (score(*p), p))
    edge_half = min((budget + 1) // 2, len(edge_ranked))
    nonedge_half = min(budget - edge_half, len(nonedge_ranked))
    edge_half = min(budget - nonedge_half, len(edge_ranked))
    return _top(edge_ranked, edge_half) + _top(nonedge_ranked, nonedge_half)


def baseline_edge(
    kind: str,
    g: Graph,
    features: np.ndarray | None,
    labels: np.ndarray | None,
    budget: int,
    attack_delta: PerturbationDelta | None = None,
    seed: int = 0,
) -> ImmuneMask:
    """Select protected pairs by one of the reference heuristics."""
    if kind not in EDGE_KINDS:
        raise ValueError(f"unknown edge baseline {kind!r}")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = np.random.default_rng(seed)
    if kind == "random":
        pool = _all_pairs(g.n)
        take = min(budget, len(pool))
        idx = rng.choice(len(pool), size=take, replace=False)
        chosen = [pool[i] for i in sorted(idx)]
    elif kind == "attack-random":
        if attack_delta is None:
            raise ValueError("attack-random baseline needs the attack delta")
        pool = sorted(attack_delta.pairs())
        take = min(budget, len(pool))
        idx = rng.choice(len(pool), size=take, replace=False)
        chosen = [pool[i] for i in sorted(idx)]
    else:
        chosen = _similarity_edge_selection(g, features, labels, budget, kind, seed)
    return ImmuneMask(frozenset(chosen), frozenset())


def _similarity_node_scores(g, features, labels, kind, seed):
    """Node score: mean similarity to same-label neighbors minus mean
    similarity to sampled different-label non-neighbors."""
    rng = np.random.default_rng(seed)
    if kind == "bridgeness":
        sim = lambda u, v: neighbor_jaccard(g, u, v)
    else:
        if features is None or labels is None:
            raise ValueError(f"{kind} baseline needs features and labels")
        sim = lambda u, v: attribute_similarity(features, u, v, kind)
    scores = np.zeros(g.n)
    for u in range(g.n):
        nbs = [int(v) for v in g.neighbors(u)]
        if kind != "bridgeness":
            nbs = [v for v in nbs if labels[v] == labels[u]]
        pos = np.mean([sim(u, v) for v in nbs]) if nbs else 0.0
        non = [v for v in range(g.n) if v != u and not g.adjacency[u, v]]
        if kind != "bridgeness" and labels is not None:
            non = [v for v in non if labels[v] != labels[u]]
        if len(non) > 20:
            non = [non[i] for i in sorted(rng.choice(len(non), 20, replace=False))]
        neg = np.mean([sim(u, v) for v in non]) if non else 0.0
        scores[u] = pos - neg
    return scores


def baseline_node(
    kind: str,
    g: Graph,
    features: np.ndarray | None,
    labels: np.ndarray | None,
    budget: int,
    attack_delta: PerturbationDelta | None = None,
    seed: int = 0,
) -> ImmuneMask:
    """Select protected nodes by one of the reference heuristics."""
    if kind not in NODE_KINDS:
        raise ValueError(f"unknown node baseline {kind!r}")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = np.random.default_rng(seed)
    if kind == "random":
        take = min(budget, g.n)
        chosen = sorted(int(v) for v in rng.choice(g.n, size=take, replace=False))
    elif kind == "attack-random":
        if attack_delta is None:
            raise ValueError("attack-random baseline needs the attack delta")
        pool = sorted(attack_delta.touched_nodes())
        take = min(budget, len(pool))
        idx = rng.choice(len(pool), size=take, replace=False)
        chosen = [pool[i] for i in sorted(idx)]
    elif kind == "betweenness":
        bc = betweenness_centrality(g)
        order = np.argsort(-bc, kind="stable")
        chosen = [int(v) for v in order[: min(budget, g.n)]]
    else:
        scores = _similarity_node_scores(g, features, labels, kind, seed)
        order = np.argsort(-scores, kind="stable")
        chosen = [int(v) for v in order[: min(budget, g.n)]]
    return ImmuneMask(frozenset(), frozenset(chosen))


def similarity_report(
    g: Graph,
    features: np.ndarray | None,
    labels: np.ndarray | None,
    mask: ImmuneMask,
) -> dict:
    """Raw metric distributions for protected versus other pairs/nodes.

    Returns ``{metric: {"protected": array, "others": array}}`` covering
    structural similarity (neighbor Jaccard / betweenness), attribute
    similarity (cosine), and same-label agreement. Feature- or label-based
    entries are omitted when those inputs are missing.
    """
    report = {}
    protected_pairs = set(mask.protected_pairs)
    pair_groups = {"protected": sorted(protected_pairs), "others": []}
    for u in range(g.n):
        for v in range(u + 1, g.n):
            if g.adjacency[u, v] and (u, v) not in protected_pairs:
                pair_groups["others"].append((u, v))

    def pair_metric(name, fn):
        report[name] = {
            grp: np.array([fn(u, v) for u, v in pairs])
            for grp, pairs in pair_groups.items()
        }

    pair_metric("edge_bridgeness", lambda u, v: neighbor_jaccard(g, u, v))
    if features is not None:
        pair_metric(
            "edge_attribute_similarity",
            lambda u, v: attribute_similarity(features, u, v, "cosine"),
        )
    if labels is not None:
        pair_metric(
            "edge_same_label", lambda u, v: float(labels[u] == labels[v])
        )

    protected_nodes = sorted(mask.protected_nodes)
    others = [v for v in range(g.n) if v not in mask.protected_nodes]
    node_groups = {"protected": protected_nodes, "others": others}
    bc = betweenness_centrality(g)
    report["node_betweenness"] = {
        grp: bc[list(nodes)] if nodes else np.array([])
        for grp, nodes in node_groups.items()
    }

    def node_neighbor_mean(u, fn):
        nbs = [int(v) for v in g.neighbors(u)]
        return float(np.mean([fn(u, v) for v in nbs])) if nbs else 0.0

    if features is not None:
        report["node_attribute_similarity"] = {
            grp: np.array(
                [
                    node_neighbor_mean(
                        u, lambda a, b: attribute_similarity(features, a, b, "cosine")
                    )
                    for u in nodes
                ]
            )
            for grp, nodes in node_groups.items()
        }
    if labels is not None:
        report["node_same_label"] = {
            grp: np.array(
                [
                    node_neighbor_mean(u, lambda a, b: float(labels[a] == labels[b]))
                    for u in nodes
                ]
            )
            for grp, nodes in node_groups.items()
        }
    return report


def histogram_rows(report: dict, bins: int = 10) -> list:
    """Flatten a similarity report into CSV rows.

    Each row is ``(metric, group, bin_lo, bin_hi, count)``; bin edges are
    shared across groups per metric.
    """
    rows = []
    for metric in sorted(report):
        groups = report[metric]
        combined = np.concatenate([v for v in groups.values() if len(v)] or [np.zeros(0)])
        if len(combined) == 0:
            continue
        lo, hi = float(combined.min()), float(combined.max())
        if lo == hi:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, minmax_bins(bins) + 1)
        for grp in sorted(groups):
            counts, _ = np.histogram(groups[grp], bins=edges)
            for b in range(len(counts)):
                rows.append(
                    (metric, grp, float(edges[b]), float(edges[b + 1]), int(counts[b]))
                )
    return rows


def minmax_bins(bins: int) -> int:
    return max(int(bins), 1)
