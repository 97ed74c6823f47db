"""Greedy immunization: choose protected pairs or nodes that maximize the
summed worst-case margins under a budget.

Edge level: repeatedly protect the pair with the largest selection score
(negated mask gradient), refreshing the surrogate attack on a fixed
schedule. Node level: score nodes the same way to shortlist candidates,
then select by exact robustness gain with lazy re-evaluation, re-solving
the attack after each protection because the worst case shifts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .certify import (
    POLISH_NODE_LIMIT,
    CertificationResult,
    ImmuneMask,
    PerturbationScenario,
    _AttackProblem,
    _solve_value,
    certify_graph,
)
from .gradients import meta_gradient_edge, meta_gradient_node
from .graph import Graph, PerturbationDelta
from .logits import Logits
from .ppr import PPRContext, transition_matrix


@dataclass
class ImmunizationRun:
    """State and audit trail of one immunization run.

    ``objective_trace`` holds the summed worst-case margin at every fresh
    attack re-solve (edge level) or after every protected node (node
    level), starting from the unprotected graph. ``update_counts`` records,
    per selected node, how many gain re-evaluations the lazy loop needed.
    ``status`` is ``ok``, ``saturated`` (worst-case delta empty: nothing
    left to defend against), or ``exhausted`` (candidates ran out before
    the budget).
    """

    mask: ImmuneMask
    objective_trace: list
    attack_update_count: int
    selections: list
    update_counts: list
    budget: int
    status: str
    certification: CertificationResult | None = None


def total_worst_margin(
    targets,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
    mask: ImmuneMask,
) -> float:
    """Objective value: sum of per-target worst-case margins under the mask."""
    return certify_graph(targets, g, ctx, l, sc, mask).total_margin()


def _masked_pair_states(g, ctx, l, sc, mask, pair_deltas):
    """Per class pair: the delta filtered by the mask, the corresponding
    perturbed adjacency, and per-node margins on it."""
    base = g.adjacency.astype(np.float64)
    n = g.n
    states = {}
    for (c1, c2), delta in sorted(pair_deltas.items()):
        active = PerturbationDelta(
            [f for f in delta.flips if not mask.is_protected(f[0], f[1])],
            directed=delta.directed,
        )
        adj = base + active.signed_matrix(n)
        r = l.h[:, c1] - l.h[:, c2]
        margins = (1.0 - ctx.alpha) * _solve_value(adj, ctx.alpha, r)
        states[(c1, c2)] = (active, adj, margins)
    return states


def _current_worst_classes(targets, y, states, k_classes):
    """Most damaging challenger per target on the current masked graphs."""
    worst = np.full(int(max(targets)) + 1, -1, dtype=np.int64)
    for t in targets:
        c1 = int(y[t])
        best_m, best_k = np.inf, -1
        for c2 in range(k_classes):
            if c2 == c1 or (c1, c2) not in states:
                continue
            m = float(states[(c1, c2)][2][t])
            if m < best_m:
                best_m, best_k = m, c2
        worst[t] = best_k
    return worst


class _EdgeScorer:
    """Vectorized per-step selection scores for one surrogate attack.

    Holds the attack's flips as flat arrays (both orientations for
    undirected deltas) so that each selection step costs a couple of
    factorizations and vector expressions instead of per-flip Python.
    Produces the same scores as accumulating ``meta_gradient_edge`` over
    the (reference class, worst class) target groups.
    """

    def __init__(self, g, ctx, l, mask, pair_deltas):
        self.n = g.n
        self.alpha = ctx.alpha
        self.base = g.adjacency.astype(np.float64)
        self.h = l.h
        self.eye = np.eye(g.n)
        self.prot = ~mask.allowed_matrix(g.n)
        self.pair_ids = {}
        self.pairs = []
        self.flips = {}
        for cp, delta in sorted(pair_deltas.items()):
            iu, jv, ss, pidx = [], [], [], []
            for u, v, s in sorted(delta.flips):
                key = (min(u, v), max(u, v))
                if key not in self.pair_ids:
                    self.pair_ids[key] = len(self.pairs)
                    self.pairs.append(key)
                pid = self.pair_ids[key]
                for a, b in ((u, v),) if delta.directed else ((u, v), (v, u)):
                    iu.append(a)
                    jv.append(b)
                    ss.append(float(s))
                    pidx.append(pid)
            self.flips[cp] = (
                np.array(iu, dtype=np.int64),
                np.array(jv, dtype=np.int64),
                np.array(ss),
                np.array(pidx, dtype=np.int64),
            )

    def mark_protected(self, u, v):
        self.prot[u, v] = self.prot[v, u] = True

    def scores(self, targets, y) -> dict:
        """Selection scores of every delta-active unprotected pair."""
        states = {}
        for cp, (iu, jv, ss, pidx) in self.flips.items():
            if len(iu) == 0:
                continue
            act = ~self.prot[iu, jv]
            adj = self.base.copy()
            adj[iu[act], jv[act]] += ss[act]
            p = transition_matrix(adj)
            lu = scipy.linalg.lu_factor(self.eye - self.alpha * p)
            r = self.h[:, cp[0]] - self.h[:, cp[1]]
            v = scipy.linalg.lu_solve(lu, r)
            states[cp] = (act, adj, p, lu, v)
        groups = {}
        for t in targets:
            c1 = int(y[t])
            best_m, best_k = np.inf, -1
            for c2 in range(self.h.shape[1]):
                if c2 == c1 or (c1, c2) not in states:
                    continue
                m = float(states[(c1, c2)][4][t])
                if m < best_m:
                    best_m, best_k = m, c2
            if best_k >= 0:
                groups.setdefault((c1, best_k), []).append(int(t))
        score_vec = np.zeros(len(self.pairs))
        touched = np.zeros(len(self.pairs), dtype=bool)
        for cp, members in sorted(groups.items()):
            act, adj, p, lu, v = states[cp]
            iu, jv, ss, pidx = self.flips[cp]
            w = np.zeros(self.n)
            w[members] = 1.0
            u_row = scipy.linalg.lu_solve(lu, w, trans=1)
            deg = adj.sum(axis=1)
            coef = np.zeros(self.n)
            nz = deg > 0
            coef[nz] = self.alpha * (1.0 - self.alpha) * u_row[nz] / deg[nz]
            pv = p @ v
            grad = coef[iu[act]] * (v[jv[act]] - pv[iu[act]]) * ss[act]
            np.add.at(score_vec, pidx[act], -grad)
            touched[pidx[act]] = True
        return {
            self.pairs[pid]: float(score_vec[pid])
            for pid in np.flatnonzero(touched)
        }


def advimmune_edge(
    targets,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
    budget: int,
    attack_updates: int | None = None,
    seed: int = 0,
):
    """Protect up to ``budget`` node pairs by greedy selection scores.

    The surrogate attack is re-solved from scratch every
    ``ceil(budget / attack_updates)`` protections (and always at step 0);
    between re-solves the selection scores track the shrinking active delta.
    Returns ``(mask, run)``.
    """
    targets = tuple(int(t) for t in targets)
    if budget < 0:
        raise ValueError("budget must be >= 0")
    y = l.require_reference()
    c = attack_updates if attack_updates is not None else min(100, max(budget, 1))
    if c < 1:
        raise ValueError("attack update count must be >= 1")
    interval = max(1, math.ceil(budget / c))

    mask = ImmuneMask.empty()
    trace = []
    selections = []
    updates = 0
    status = "ok"
    cert = None
    scorer = None
    fresh_for = None

    def refresh(current_mask):
        nonlocal cert, scorer, updates, fresh_for
        cert = certify_graph(targets, g, ctx, l, sc, current_mask)
        scorer = _EdgeScorer(g, ctx, l, current_mask, cert.pair_deltas)
        updates += 1
        fresh_for = current_mask
        trace.append(cert.total_margin())

    refresh(mask)
    step = 0
    while len(selections) < budget:
        if step % interval == 0 and fresh_for != mask:
            refresh(mask)
        if all(len(d) == 0 for d in cert.pair_deltas.values()):
            status = "saturated"
            break
        scores = scorer.scores(targets, y)
        if not scores and fresh_for != mask:
            refresh(mask)
            scores = scorer.scores(targets, y)
        if not scores:
            status = "saturated" if all(
                len(d) == 0 for d in cert.pair_deltas.values()
            ) else "exhausted"
            break
        best_pair = max(sorted(scores), key=lambda p: (scores[p], (-p[0], -p[1])))
        mask = mask.with_pair(*best_pair)
        scorer.mark_protected(*best_pair)
        selections.append(best_pair)
        step += 1

    if fresh_for != mask:
        refresh(mask)
    run = ImmunizationRun(
        mask, trace, updates, selections, [], budget, status, cert
    )
    return mask, run


def robustness_gain(
    j: int,
    state: ImmunizationRun,
    targets,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
) -> float:
    """Exact objective increase from additionally protecting node ``j``.

    The worst-case attack is re-solved under the enlarged mask (warm-started
    from the current one) with each target's challenger class frozen at its
    current worst class; the gain is the difference of the two margin sums.
    """
    mask = state.mask
    cert = state.certification
    if cert is None:
        raise ValueError("state carries no current certification")
    if j in mask.protected_nodes:
        raise ValueError(f"node {j} is already protected")
    y = l.require_reference()
    targets = tuple(int(t) for t in targets)
    idx = {t: i for i, t in enumerate(cert.targets)}
    old_sum = float(sum(cert.worst_margin[idx[t]] for t in targets))

    mask_j = mask.with_node(j)
    problem = _AttackProblem(g, ctx, sc, mask_j)
    polish = (not sc.directed) and g.n <= POLISH_NODE_LIMIT
    groups = {}
    for t in targets:
        groups.setdefault((int(y[t]), int(cert.worst_class[idx[t]])), []).append(t)
    new_sum = 0.0
    for (c1, c2), members in sorted(groups.items()):
        r = l.h[:, c1] - l.h[:, c2]
        warm = cert.pair_deltas.get((c1, c2))
        run = problem.run(r, np.array(members), warm)
        for t in members:
            m = float((1.0 - ctx.alpha) * run.value[t])
            if polish:
                for start in (run.flip, np.zeros_like(run.flip)):
                    pflip, pv = problem.polish_target(t, r, start)
                    pm = float((1.0 - ctx.alpha) * pv)
                    if pm < m:
                        m = pm
            new_sum += m
    return new_sum - old_sum


def advimmune_node(
    targets,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
    budget: int,
    candidate_count: int | None = None,
    seed: int = 0,
):
    """Protect up to ``budget`` nodes by exact robustness gains.

    Candidates are the top nodes by the node selection score; gains are
    kept in a lazily re-evaluated priority order: the cached maximum is
    re-computed against the current mask and accepted only if it stays on
    top. Returns ``(mask, run)``.
    """
    targets = tuple(int(t) for t in targets)
    if budget < 0:
        raise ValueError("budget must be >= 0")
    n = g.n
    if candidate_count is None:
        candidate_count = min(n, max(4 * budget, 50))
    if budget > 0 and candidate_count < budget:
        raise ValueError("candidate_count must be at least the budget")
    y = l.require_reference()

    mask = ImmuneMask.empty()
    cert = certify_graph(targets, g, ctx, l, sc, mask)
    trace = [cert.total_margin()]
    run = ImmunizationRun(mask, trace, 1, [], [], budget, "ok", cert)
    if budget == 0:
        return mask, run
    if all(len(d) == 0 for d in cert.pair_deltas.values()):
        run.status = "saturated"
        return mask, run

    # shortlist by selection score on the current worst-case graphs
    states = _masked_pair_states(g, ctx, l, sc, mask, cert.pair_deltas)
    value = np.zeros(n)
    groups = {}
    for i, t in enumerate(targets):
        groups.setdefault((int(y[t]), int(cert.worst_class[i])), []).append(t)
    wc = np.full(n, -1, dtype=np.int64)
    for i, t in enumerate(targets):
        wc[t] = cert.worst_class[i]
    for (c1, c2), members in sorted(groups.items()):
        active, adj, _ = states[(c1, c2)]
        mg = meta_gradient_node(members, adj, wc, active, mask, ctx, l)
        value += mg.node_value()
    order = np.argsort(-value, kind="stable")
    candidates = [int(v) for v in order[:candidate_count]]

    gains = {
        j: robustness_gain(j, run, targets, g, ctx, l, sc) for j in candidates
    }
    while len(run.selections) < budget and candidates:
        lookups = 0
        while True:
            j1 = max(candidates, key=lambda j: (gains[j], -j))
            gains[j1] = robustness_gain(j1, run, targets, g, ctx, l, sc)
            lookups += 1
            j2 = max(candidates, key=lambda j: (gains[j], -j))
            if j2 == j1:
                break
        mask = mask.with_node(j1)
        candidates.remove(j1)
        del gains[j1]
        run.mask = mask
        run.selections.append(j1)
        run.update_counts.append(lookups)
        cert = certify_graph(targets, g, ctx, l, sc, mask, warm=cert.pair_deltas)
        run.certification = cert
        run.attack_update_count += 1
        trace.append(cert.total_margin())
    if len(run.selections) < budget and not candidates:
        run.status = "exhausted"
    return mask, run
