"""Undirected simple graphs, edge-list ingestion, and edge-flip deltas."""

from __future__ import annotations

import hashlib

import numpy as np

ADD = 1
REMOVE = -1


class GraphError(ValueError):
    """Raised for malformed edge lists or invalid graph operations."""


class Graph:
    """Immutable undirected simple graph over dense node ids 0..n-1.

    The adjacency matrix and degree vector are exposed as read-only numpy
    arrays; all mutation goes through :func:`apply_delta`, which returns a
    new graph. Instances are safe to share across workers.
    """

    __slots__ = ("n", "_adj", "_deg", "_fingerprint", "original_ids")

    def __init__(self, n: int, edges, original_ids=None):
        if n < 0:
            raise GraphError(f"node count must be >= 0, got {n}")
        adj = np.zeros((n, n), dtype=np.uint8)
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={n}")
            adj[u, v] = 1
            adj[v, u] = 1
        adj.flags.writeable = False
        self.n = n
        self._adj = adj
        deg = adj.sum(axis=1).astype(np.int64)
        deg.flags.writeable = False
        self._deg = deg
        self._fingerprint = None
        self.original_ids = None if original_ids is None else tuple(original_ids)

    @property
    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 matrix, read-only, shape (n, n)."""
        return self._adj

    @property
    def degrees(self) -> np.ndarray:
        return self._deg

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self._adj[i])

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self._adj[u, v])

    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self._adj, k=1))
        return list(zip(iu.tolist(), ju.tolist()))

    @property
    def num_edges(self) -> int:
        return int(self._deg.sum()) // 2

    def fingerprint(self) -> str:
        """Stable content hash, used as a solver-cache key."""
        if self._fingerprint is None:
            h = hashlib.sha1()
            h.update(str(self.n).encode())
            h.update(self._adj.tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self._adj, other._adj)

    def __hash__(self):
        return hash((self.n, self.fingerprint()))

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.num_edges})"


class PerturbationDelta:
    """A set of edge flips relative to a base graph.

    Each flip is a ``(u, v, sign)`` triple with sign ``ADD`` (+1, the pair is
    a non-edge of the base graph and gets connected) or ``REMOVE`` (-1, an
    existing edge gets cut). Undirected deltas store pairs as ``u < v``;
    directed deltas keep orientation, and a flip only touches row ``u`` of
    the adjacency matrix.
    """

    __slots__ = ("flips", "directed")

    def __init__(self, flips=(), directed: bool = False):
        canon = set()
        for u, v, s in flips:
            u, v, s = int(u), int(v), int(s)
            if u == v:
                raise GraphError(f"flip ({u}, {v}) is a self-loop")
            if s not in (ADD, REMOVE):
                raise GraphError(f"flip sign must be +1 or -1, got {s}")
            if not directed and u > v:
                u, v = v, u
            canon.add((u, v, s))
        pairs = [(u, v) for u, v, _ in canon]
        if len(set(pairs)) != len(pairs):
            raise GraphError("a node pair appears twice in the delta")
        self.flips = frozenset(canon)
        self.directed = directed

    @staticmethod
    def empty(directed: bool = False) -> "PerturbationDelta":
        return PerturbationDelta((), directed=directed)

    def __len__(self):
        return len(self.flips)

    def __bool__(self):
        return bool(self.flips)

    def __eq__(self, other):
        if not isinstance(other, PerturbationDelta):
            return NotImplemented
        return self.flips == other.flips and self.directed == other.directed

    def __hash__(self):
        return hash((self.flips, self.directed))

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"PerturbationDelta({sorted(self.flips)}, {kind})"

    def pairs(self) -> set[tuple[int, int]]:
        """Unordered node pairs touched by the delta."""
        return {(min(u, v), max(u, v)) for u, v, _ in self.flips}

    def touched_nodes(self) -> set[int]:
        return {x for u, v, _ in self.flips for x in (u, v)}

    def negate(self) -> "PerturbationDelta":
        return PerturbationDelta(
            ((u, v, -s) for u, v, s in self.flips), directed=self.directed
        )

    def incident_counts(self, n: int) -> np.ndarray:
        """Number of flips charged against each node's local budget.

        Undirected flips charge both endpoints; directed flips charge only
        the source node.
        """
        counts = np.zeros(n, dtype=np.int64)
        for u, v, _ in self.flips:
            counts[u] += 1
            if not self.directed:
                counts[v] += 1
        return counts

    def signed_matrix(self, n: int) -> np.ndarray:
        """Dense signed flip matrix A' (both orientations when undirected)."""
        m = np.zeros((n, n), dtype=np.float64)
        if not self.flips:
            return m
        iu, jv, ss = zip(*self.flips)
        m[list(iu), list(jv)] = ss
        if not self.directed:
            m[list(jv), list(iu)] = ss
        return m

    def validate_against(self, g: Graph) -> None:
        """Check every flip is consistent with the base graph."""
        adj = g.adjacency
        for u, v, s in self.flips:
            if u >= g.n or v >= g.n:
                raise GraphError(f"flip ({u}, {v}) out of range for n={g.n}")
            if s == ADD and adj[u, v]:
                raise GraphError(f"flip adds existing edge ({u}, {v})")
            if s == REMOVE and not adj[u, v]:
                raise GraphError(f"flip removes absent edge ({u}, {v})")


def perturbed_adjacency(g: Graph, delta: PerturbationDelta) -> np.ndarray:
    """Adjacency matrix of the base graph with the delta applied.

    Directed deltas yield an asymmetric matrix (only row ``u`` of each flip
    changes); the result is a fresh float array either way.
    """
    delta.validate_against(g)
    adj = g.adjacency.astype(np.float64)
    for u, v, s in delta.flips:
        adj[u, v] += s
        if not delta.directed:
            adj[v, u] += s
    return adj


def apply_delta(g: Graph, delta: PerturbationDelta) -> Graph:
    """Return a new graph with the (undirected) delta applied."""
    if delta.directed:
        raise GraphError("directed deltas cannot produce an undirected Graph")
    adj = perturbed_adjacency(g, delta).astype(np.uint8)
    iu, ju = np.nonzero(np.triu(adj, k=1))
    return Graph(g.n, zip(iu.tolist(), ju.tolist()))


def load_edge_list(text: str) -> Graph:
    """Parse a line-oriented edge list into a graph.

    Format: UTF-8 text, ``#`` starts a comment, optional first line
    ``n=<int>`` fixes the node count (allowing isolated trailing ids), then
    one ``<u> <v>`` pair per line. Without the header, arbitrary ids are
    remapped to dense 0..n-1 in sorted order and the original ids are kept
    on ``Graph.original_ids``.
    """
    header_n = None
    raw_edges = []  # (lineno, u, v)
    seen_header_slot = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if not seen_header_slot:
            seen_header_slot = True
            if body.startswith("n="):
                try:
                    header_n = int(body[2:])
                except ValueError:
                    raise GraphError(f"line {lineno}: bad node-count header {body!r}")
                if header_n < 0:
                    raise GraphError(f"line {lineno}: negative node count")
                continue
        parts = body.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected two node ids, got {body!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"line {lineno}: non-integer node id in {body!r}")
        if u < 0 or v < 0:
            raise GraphError(f"line {lineno}: negative node id in {body!r}")
        if u == v:
            raise GraphError(f"line {lineno}: self-loop at node {u}")
        raw_edges.append((lineno, u, v))

    if header_n is not None:
        for lineno, u, v in raw_edges:
            if u >= header_n or v >= header_n:
                raise GraphError(
                    f"line {lineno}: node id exceeds declared n={header_n}"
                )
        return Graph(header_n, [(u, v) for _, u, v in raw_edges])

    ids = sorted({x for _, u, v in raw_edges for x in (u, v)})
    remap = {orig: dense for dense, orig in enumerate(ids)}
    edges = [(remap[u], remap[v]) for _, u, v in raw_edges]
    identity = ids == list(range(len(ids)))
    return Graph(len(ids), edges, original_ids=None if identity else ids)


# Zachary's karate club: 34 members, 78 ties, the two factions as labels.
_KARATE_EDGES = (
    (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (0, 7), (0, 8), (0, 10),
    (0, 11), (0, 12), (0, 13), (0, 17), (0, 19), (0, 21), (0, 31), (1, 2),
    (1, 3), (1, 7), (1, 13), (1, 17), (1, 19), (1, 21), (1, 30), (2, 3),
    (2, 7), (2, 8), (2, 9), (2, 13), (2, 27), (2, 28), (2, 32), (3, 7),
    (3, 12), (3, 13), (4, 6), (4, 10), (5, 6), (5, 10), (5, 16), (6, 16),
    (8, 30), (8, 32), (8, 33), (9, 33), (13, 33), (14, 32), (14, 33),
    (15, 32), (15, 33), (18, 32), (18, 33), (19, 33), (20, 32), (20, 33),
    (22, 32), (22, 33), (23, 25), (23, 27), (23, 29), (23, 32), (23, 33),
    (24, 25), (24, 27), (24, 31), (25, 31), (26, 29), (26, 33), (27, 33),
    (28, 31), (28, 33), (29, 32), (29, 33), (30, 32), (30, 33), (31, 32),
    (31, 33), (32, 33),
)

_KARATE_LABELS = (
    0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1,
    1, 1, 1, 1, 1, 1, 1, 1, 1, 1,
)


def karate() -> Graph:
    """The built-in karate club network (34 nodes, 78 edges)."""
    return Graph(34, _KARATE_EDGES)


def karate_labels() -> np.ndarray:
    """Faction membership of the karate club nodes (two classes)."""
    return np.array(_KARATE_LABELS, dtype=np.int64)


def load_labels(text: str, n: int | None = None) -> np.ndarray:
    """Parse a ``node_id,label`` CSV into a dense label vector.

    A ``node_id,label`` header row is skipped if present. When ``n`` is
    given the vector has that length; otherwise max id + 1.
    """
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        parts = body.split(",")
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'node_id,label'")
        if lineno == 1 and not parts[0].strip().lstrip("-").isdigit():
            continue  # header row
        try:
            node, label = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"line {lineno}: non-integer entry in {body!r}")
        if node in pairs:
            raise GraphError(f"line {lineno}: duplicate node id {node}")
        pairs[node] = label
    size = n if n is not None else (max(pairs) + 1 if pairs else 0)
    out = np.zeros(size, dtype=np.int64)
    for node, label in pairs.items():
        if node >= size:
            raise GraphError(f"label for node {node} exceeds n={size}")
        out[node] = label
    return out
