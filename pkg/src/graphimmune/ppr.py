"""Personalized PageRank rows/matrices and resolvent value vectors.

Everything downstream (margins, certification, gradients) reduces to solves
against the resolvent ``(I - alpha * P)`` where ``P`` is the row-stochastic
transition matrix of a graph. This module owns that matrix, a dense
LU-backed solver with a per-graph cache, and a power-iteration fallback for
large graphs.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .graph import Graph

_DENSE_LIMIT = 4000


class ConvergenceError(RuntimeError):
    """Iterative solve did not reach the residual tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class PPRContext:
    """Solver configuration: restart parameter and numerical policy.

    ``alpha`` is the probability of continuing the walk (the paper's usual
    "transition probability"); ``1 - alpha`` is the restart mass. ``solver``
    is ``"dense"`` (exact LU), ``"power"`` (fixed-point iteration), or
    ``"auto"`` which picks dense up to 4000 nodes.
    """

    alpha: float = 0.85
    solver: str = "auto"
    tol: float = 1e-10
    max_iter: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.solver not in ("auto", "dense", "power"):
            raise ValueError(f"unknown solver {self.solver!r}")

    def resolved_solver(self, n: int) -> str:
        if self.solver == "auto":
            return "dense" if n <= _DENSE_LIMIT else "power"
        return self.solver


def transition_matrix(adj: np.ndarray) -> np.ndarray:
    """Row-normalize an adjacency matrix into a transition matrix.

    Zero-degree rows become the corresponding basis row (a self-redirect),
    which keeps the matrix row-stochastic after removal-heavy perturbations.
    """
    adj = np.asarray(adj, dtype=np.float64)
    deg = adj.sum(axis=1)
    p = np.zeros_like(adj)
    nz = deg > 0
    p[nz] = adj[nz] / deg[nz, None]
    zeros = np.flatnonzero(~nz)
    p[zeros, zeros] = 1.0
    return p


class ResolventSolver:
    """LU factorization of ``I - alpha * P``, reused across right-hand sides.

    ``solve`` handles column systems ``(I - aP) x = b`` (value vectors),
    ``solve_row`` the transposed system giving rows ``e_t (I - aP)^-1``
    (PPR rows up to the ``1 - alpha`` factor).
    """

    def __init__(self, p: np.ndarray, alpha: float):
        self.alpha = alpha
        self.n = p.shape[0]
        self.p = p
        self._lu = scipy.linalg.lu_factor(np.eye(self.n) - alpha * p)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self._lu, b)

    def solve_row(self, weights: np.ndarray) -> np.ndarray:
        """Solve ``x (I - aP) = weights`` for the row vector ``x``."""
        return scipy.linalg.lu_solve(self._lu, weights, trans=1)

    def resolvent(self) -> np.ndarray:
        """Dense ``(I - aP)^-1``; rows scale to PPR rows."""
        return self.solve(np.eye(self.n))


_cache: OrderedDict[tuple, ResolventSolver] = OrderedDict()
_CACHE_SIZE = 16


def solver_for(g: Graph, alpha: float) -> ResolventSolver:
    """Fetch (or build and cache) the dense solver for a graph."""
    key = (g.fingerprint(), alpha)
    if key in _cache:
        _cache.move_to_end(key)
        return _cache[key]
    solver = ResolventSolver(transition_matrix(g.adjacency), alpha)
    _cache[key] = solver
    if len(_cache) > _CACHE_SIZE:
        _cache.popitem(last=False)
    return solver


def _power_row(p, t, alpha, tol, max_iter):
    n = p.shape[0]
    pi = np.zeros(n)
    pi[t] = 1.0
    restart = np.zeros(n)
    restart[t] = 1.0 - alpha
    for _ in range(max_iter):
        nxt = restart + alpha * (pi @ p)
        if np.abs(nxt - pi).max() <= tol:
            return nxt
        pi = nxt
    raise ConvergenceError(
        f"PPR row {t} did not converge in {max_iter} iterations",
        float(np.abs(nxt - pi).max()),
    )


def _power_value(p, r, alpha, tol, max_iter):
    v = np.array(r, dtype=np.float64)
    for _ in range(max_iter):
        nxt = r + alpha * (p @ v)
        if np.abs(nxt - v).max() <= tol:
            return nxt
        v = nxt
    raise ConvergenceError(
        f"value vector did not converge in {max_iter} iterations",
        float(np.abs(nxt - v).max()),
    )


def ppr_row(g: Graph, ctx: PPRContext, t: int) -> np.ndarray:
    """Personalized PageRank row with source ``t``: the visiting
    distribution of an ``alpha``-continuation random walk restarted at ``t``.
    """
    if not 0 <= t < g.n:
        raise ValueError(f"source node {t} out of range for n={g.n}")
    if ctx.resolved_solver(g.n) == "dense":
        e = np.zeros(g.n)
        e[t] = 1.0
        return (1.0 - ctx.alpha) * solver_for(g, ctx.alpha).solve_row(e)
    p = transition_matrix(g.adjacency)
    return _power_row(p, t, ctx.alpha, ctx.tol, ctx.max_iter)


def ppr_matrix(g: Graph, ctx: PPRContext) -> np.ndarray:
    """Full PPR matrix; row ``t`` equals ``ppr_row(g, ctx, t)``."""
    if ctx.resolved_solver(g.n) == "dense":
        return (1.0 - ctx.alpha) * solver_for(g, ctx.alpha).resolvent()
    p = transition_matrix(g.adjacency)
    rows = [_power_row(p, t, ctx.alpha, ctx.tol, ctx.max_iter) for t in range(g.n)]
    return np.array(rows)


def value_vector(g: Graph, ctx: PPRContext, r: np.ndarray) -> np.ndarray:
    """Solve ``v = r + alpha * P v`` for the given reward vector."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (g.n,):
        raise ValueError(f"reward must have shape ({g.n},), got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("reward vector contains non-finite entries")
    if ctx.resolved_solver(g.n) == "dense":
        return solver_for(g, ctx.alpha).solve(r)
    p = transition_matrix(g.adjacency)
    return _power_value(p, r, ctx.alpha, ctx.tol, ctx.max_iter)
