"""Worst-case margins under structure perturbations, and their certificates.

A node's margin for a challenger class is the diffused score difference
between its reference class and the challenger. The attacker may flip a
budget-limited set of node pairs (add non-edges, cut edges) that are not
protected by an immunization mask; the worst-case margin is the minimum over
all admissible flip sets. The attack is solved as a per-node fixed-point
search over flip configurations ("policy iteration"): exact when pairs flip
per orientation (``directed-fragile``), heuristic when a flip alters both
endpoints at once (``undirected-pair``). A brute-force enumerator provides
ground truth on small instances, and is the only component that honors an
optional global flip budget.

The attack machinery always solves its linear systems densely; the
``PPRContext`` solver choice applies to the clean-graph PPR operations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import ADD, REMOVE, Graph, PerturbationDelta, perturbed_adjacency
from .logits import Logits
from .ppr import PPRContext, _power_value, solver_for, transition_matrix

MAX_SWEEPS = 100
PLATEAU_SWEEPS = 2
ORACLE_PAIR_LIMIT = 22
POLISH_NODE_LIMIT = 20
_DEEP_POLISH_LIMIT = 10
_POLISH_STEP_CAP = 60


class OracleGuardError(ValueError):
    """Brute-force enumeration refused: too many admissible pairs."""


@dataclass(frozen=True)
class BudgetRule:
    """How many flips may touch each node.

    Kinds: ``degree-minus`` gives ``max(degree - value, 0)``, ``constant``
    gives the same budget everywhere, ``explicit`` carries a full vector.
    """

    kind: str = "degree-minus"
    value: int | tuple = 6

    @staticmethod
    def degree_minus(c: int = 6) -> "BudgetRule":
        return BudgetRule("degree-minus", int(c))

    @staticmethod
    def constant(b: int) -> "BudgetRule":
        return BudgetRule("constant", int(b))

    @staticmethod
    def explicit(budgets) -> "BudgetRule":
        return BudgetRule("explicit", tuple(int(b) for b in budgets))

    def values(self, g: Graph) -> np.ndarray:
        if self.kind == "degree-minus":
            return np.maximum(g.degrees - int(self.value), 0).astype(np.int64)
        if self.kind == "constant":
            if self.value < 0:
                raise ValueError("constant budget must be >= 0")
            return np.full(g.n, int(self.value), dtype=np.int64)
        if self.kind == "explicit":
            vec = np.array(self.value, dtype=np.int64)
            if vec.shape != (g.n,):
                raise ValueError(f"explicit budgets must have length {g.n}")
            if vec.min() < 0:
                raise ValueError("budgets must be >= 0")
            return vec
        raise ValueError(f"unknown budget rule kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "explicit":
            return "explicit:" + ",".join(str(v) for v in self.value)
        return f"{self.kind}:{self.value}"

    @staticmethod
    def parse(text: str) -> "BudgetRule":
        kind, _, arg = text.partition(":")
        if kind == "degree-minus":
            return BudgetRule.degree_minus(int(arg or 6))
        if kind == "constant":
            return BudgetRule.constant(int(arg))
        if kind == "explicit":
            return BudgetRule.explicit(int(v) for v in arg.split(",") if v)
        raise ValueError(f"unknown budget rule {text!r}")


@dataclass(frozen=True)
class PerturbationScenario:
    """Admissible attack description: what the adversary may flip."""

    kind: str = "remove-add"
    local_budget: BudgetRule = field(default_factory=BudgetRule.degree_minus)
    global_budget: int | None = None
    edge_mode: str = "undirected-pair"

    def __post_init__(self):
        if self.kind != "remove-add":
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.edge_mode not in ("undirected-pair", "directed-fragile"):
            raise ValueError(f"unknown edge mode {self.edge_mode!r}")
        if self.global_budget is not None and self.global_budget < 0:
            raise ValueError("global budget must be >= 0")

    @property
    def directed(self) -> bool:
        return self.edge_mode == "directed-fragile"


@dataclass(frozen=True)
class ImmuneMask:
    """Protected node pairs and nodes that the attacker may never touch.

    A pair is effectively protected when it is listed directly or when
    either endpoint is a protected node.
    """

    protected_pairs: frozenset = frozenset()
    protected_nodes: frozenset = frozenset()

    def __post_init__(self):
        pairs = frozenset(
            (min(int(u), int(v)), max(int(u), int(v)))
            for u, v in self.protected_pairs
        )
        for u, v in pairs:
            if u == v:
                raise ValueError(f"protected pair ({u}, {v}) is a self-pair")
        object.__setattr__(self, "protected_pairs", pairs)
        object.__setattr__(
            self, "protected_nodes", frozenset(int(v) for v in self.protected_nodes)
        )

    @staticmethod
    def empty() -> "ImmuneMask":
        return ImmuneMask()

    @property
    def edge_budget_used(self) -> int:
        return len(self.protected_pairs)

    @property
    def node_budget_used(self) -> int:
        return len(self.protected_nodes)

    def is_protected(self, u: int, v: int) -> bool:
        key = (min(u, v), max(u, v))
        return (
            key in self.protected_pairs
            or u in self.protected_nodes
            or v in self.protected_nodes
        )

    def with_pair(self, u: int, v: int) -> "ImmuneMask":
        return ImmuneMask(
            self.protected_pairs | {(u, v)}, self.protected_nodes
        )

    def with_node(self, v: int) -> "ImmuneMask":
        return ImmuneMask(self.protected_pairs, self.protected_nodes | {v})

    def allowed_matrix(self, n: int) -> np.ndarray:
        """Boolean (n, n) matrix: True where the attacker may flip."""
        allowed = np.ones((n, n), dtype=bool)
        np.fill_diagonal(allowed, False)
        for u, v in self.protected_pairs:
            allowed[u, v] = allowed[v, u] = False
        for v in self.protected_nodes:
            allowed[v, :] = False
            allowed[:, v] = False
        return allowed

    def to_dict(self) -> dict:
        return {
            "protected_pairs": sorted(list(p) for p in self.protected_pairs),
            "protected_nodes": sorted(self.protected_nodes),
        }

    @staticmethod
    def from_dict(obj: dict) -> "ImmuneMask":
        return ImmuneMask(
            frozenset(tuple(p) for p in obj.get("protected_pairs", [])),
            frozenset(obj.get("protected_nodes", [])),
        )


def margin(t: int, k: int, g: Graph, ctx: PPRContext, l: Logits) -> float:
    """Diffused score gap of node ``t``: reference class minus class ``k``."""
    y = l.require_reference()
    if l.n != g.n:
        raise ValueError("score matrix and graph disagree on node count")
    if not (0 <= t < g.n and 0 <= k < l.k):
        raise ValueError(f"target {t} / class {k} out of range")
    if k == y[t]:
        return 0.0
    r = l.h[:, y[t]] - l.h[:, k]
    if ctx.resolved_solver(g.n) == "dense":
        v = solver_for(g, ctx.alpha).solve(r)
    else:
        v = _power_value(
            transition_matrix(g.adjacency), r, ctx.alpha, ctx.tol, ctx.max_iter
        )
    return float((1.0 - ctx.alpha) * v[t])


def _solve_value(adj: np.ndarray, alpha: float, r: np.ndarray) -> np.ndarray:
    p = transition_matrix(adj)
    return np.linalg.solve(np.eye(adj.shape[0]) - alpha * p, r)


def margin_under_delta(
    t: int,
    k: int,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    delta: PerturbationDelta,
) -> float:
    """Margin of node ``t`` on the base graph with ``delta`` applied."""
    y = l.require_reference()
    if k == y[t]:
        return 0.0
    adj = perturbed_adjacency(g, delta)
    r = l.h[:, y[t]] - l.h[:, k]
    v = _solve_value(adj, ctx.alpha, r)
    return float((1.0 - ctx.alpha) * v[t])


# ---------------------------------------------------------------------------
# Policy-iteration attack


@dataclass
class AttackRun:
    """Outcome of one attack solve for a fixed reward vector."""

    flip: np.ndarray  # signed (n, n) flip matrix
    value: np.ndarray  # resolvent value vector of the final flip
    converged: bool
    sweeps: int
    value_trace: list  # value vector after each sweep's evaluation

    def margins(self, one_minus_alpha: float) -> np.ndarray:
        return one_minus_alpha * self.value


class _AttackProblem:
    """Shared precomputation for attacks on one (graph, scenario, mask)."""

    def __init__(self, g: Graph, ctx: PPRContext, sc: PerturbationScenario, mask: ImmuneMask):
        self.g = g
        self.n = g.n
        self.alpha = ctx.alpha
        self.directed = sc.directed
        self.base = g.adjacency.astype(np.float64)
        self.base_nb = g.adjacency.astype(bool)
        self.budgets = sc.local_budget.values(g)
        self.allowed = mask.allowed_matrix(g.n)
        self.identity = np.eye(g.n)
        # static per-node candidate sets; budgets only shrink them further
        self._rem_cand = [
            np.flatnonzero(self.base_nb[i] & self.allowed[i]) for i in range(g.n)
        ]
        self._add_cand = [
            np.flatnonzero(~self.base_nb[i] & self.allowed[i]) for i in range(g.n)
        ]
        self._nb = [np.flatnonzero(self.base_nb[i]) for i in range(g.n)]

    # -- shared pieces

    def flip_to_delta(self, flip: np.ndarray) -> PerturbationDelta:
        if self.directed:
            iu, ju = np.nonzero(flip)
            flips = [(int(i), int(j), int(flip[i, j])) for i, j in zip(iu, ju)]
        else:
            iu, ju = np.nonzero(np.triu(flip, k=1))
            flips = [(int(i), int(j), int(flip[i, j])) for i, j in zip(iu, ju)]
        return PerturbationDelta(flips, directed=self.directed)

    def delta_to_flip(self, delta: PerturbationDelta | None) -> np.ndarray:
        """Materialize a warm-start delta, dropping protected/infeasible flips."""
        flip = np.zeros((self.n, self.n))
        if delta is None:
            return flip
        used = np.zeros(self.n, dtype=np.int64)
        for u, v, s in sorted(delta.flips):
            if not self.allowed[u, v]:
                continue
            if self.directed:
                if used[u] + 1 > self.budgets[u]:
                    continue
                used[u] += 1
                flip[u, v] = s
            else:
                if used[u] + 1 > self.budgets[u] or used[v] + 1 > self.budgets[v]:
                    continue
                used[u] += 1
                used[v] += 1
                flip[u, v] = flip[v, u] = s
        return flip

    def evaluate(self, flip: np.ndarray, r: np.ndarray) -> np.ndarray:
        return _solve_value(self.base + flip, self.alpha, r)

    def _best_action(self, i, rem, addc, v, r_i, budget):
        """Exact minimum Bellman backup over flip choices at node ``i``.

        Removal candidates arrive sorted by value descending, additions
        ascending; any optimal choice removes a prefix of one and adds a
        prefix of the other.
        """
        nb = self._nb[i]
        s0 = v[nb].sum()
        d0 = len(nb)
        rem_ps = np.concatenate(([0.0], np.cumsum(v[rem])))
        add_ps = np.concatenate(([0.0], np.cumsum(v[addc])))
        max_r = min(budget, len(rem))
        max_a = min(budget, len(addc))
        rc = np.arange(max_r + 1)[:, None]
        ac = np.arange(max_a + 1)[None, :]
        sizes = d0 - rc + ac
        sums = s0 - rem_ps[: max_r + 1, None] + add_ps[None, : max_a + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            backups = r_i + self.alpha * (sums / np.where(sizes == 0, 1, sizes))
        backups = np.where(sizes == 0, r_i + self.alpha * v[i], backups)
        backups = np.where(rc + ac <= budget, backups, np.inf)
        best_flat = int(np.argmin(backups))
        best_rc, best_ac = divmod(best_flat, backups.shape[1])
        return float(backups[best_rc, best_ac]), rem[:best_rc], addc[:best_ac]

    def _incumbent_backup(self, i, flip, v, r_i):
        row = self.base[i] + flip[i]
        nb = np.flatnonzero(row > 0)
        if len(nb) == 0:
            return r_i + self.alpha * v[i]
        return r_i + self.alpha * (v[nb].sum() / len(nb))

    # -- directed mode: per-node improvement is exact and rows decouple

    def _sweep_directed(self, flip, v, r, order):
        new_flip = flip.copy()
        changed = False
        for i in order:
            b = int(self.budgets[i])
            if b == 0:
                continue
            rem = self._rem_cand[i]
            addc = self._add_cand[i]
            rem = rem[np.argsort(-v[rem], kind="stable")]
            addc = addc[np.argsort(v[addc], kind="stable")]
            best, rem_set, add_set = self._best_action(i, rem, addc, v, r[i], b)
            incumbent = self._incumbent_backup(i, flip, v, r[i])
            if best < incumbent - 1e-12 * (1.0 + abs(incumbent)):
                new_flip[i, :] = 0.0
                new_flip[i, rem_set] = REMOVE
                new_flip[i, add_set] = ADD
                changed = True
        return new_flip, changed

    # -- undirected mode: flips couple both endpoints; coordinate heuristic

    def _sweep_undirected(self, flip, v, r, order):
        flip = flip.copy()
        used = np.count_nonzero(flip, axis=1)
        changed = False
        for i in order:
            b = int(self.budgets[i])
            if b == 0:
                continue
            prev = np.flatnonzero(flip[i])
            prev_signs = flip[i, prev].copy()
            incumbent = self._incumbent_backup(i, flip, v, r[i])
            # tentatively revert this node's flips, freeing partner budget
            used[prev] -= 1
            used[i] = 0
            flip[i, prev] = 0.0
            flip[prev, i] = 0.0
            rem = self._rem_cand[i]
            rem = rem[self.budgets[rem] - used[rem] >= 1]
            addc = self._add_cand[i]
            addc = addc[self.budgets[addc] - used[addc] >= 1]
            rem = rem[np.argsort(-v[rem], kind="stable")]
            addc = addc[np.argsort(v[addc], kind="stable")]
            best, rem_set, add_set = self._best_action(i, rem, addc, v, r[i], b)
            if best < incumbent - 1e-12 * (1.0 + abs(incumbent)):
                flip[i, rem_set] = REMOVE
                flip[rem_set, i] = REMOVE
                flip[i, add_set] = ADD
                flip[add_set, i] = ADD
                chosen = np.concatenate((rem_set, add_set))
                used[chosen] += 1
                used[i] = len(chosen)
                if len(prev) != len(chosen) or set(prev) != set(chosen):
                    changed = True
                elif not np.array_equal(np.sign(flip[i, prev]), prev_signs):
                    changed = True
            else:
                flip[i, prev] = prev_signs
                flip[prev, i] = prev_signs
                used[prev] += 1
                used[i] = len(prev)
        return flip, changed

    def run(
        self,
        r: np.ndarray,
        objective_nodes: np.ndarray,
        warm: PerturbationDelta | None = None,
    ) -> AttackRun:
        """Minimize the value vector over admissible flips for reward ``r``.

        ``objective_nodes`` scores competing local optima in undirected mode
        (sum of their values); directed mode converges to a per-node
        simultaneous optimum and ignores it.

        Directed mode runs plain fixed-point iteration (the simultaneous
        per-node improvement is order-independent and converges to the
        optimum). Undirected mode is a heuristic whose local optimum depends
        heavily on the sweep order and the starting flips: every start is
        raced under ascending and descending node order, and cold calls add
        a start seeded from the directed relaxation next to the empty one.
        """
        if self.directed:
            return self._iterate(r, objective_nodes, warm)
        starts = [warm] if warm is not None else [None]
        if warm is None:
            seed = self._directed_seed(r)
            if seed is not None:
                starts.append(seed)
        orders = [np.arange(self.n), np.arange(self.n)[::-1]]
        best = None
        best_obj = np.inf
        for start in starts:
            for order in orders:
                run = self._iterate(r, objective_nodes, start, order=order)
                obj = float(run.value[objective_nodes].sum())
                if best is None or obj < best_obj - 1e-15:
                    best, best_obj = run, obj
        return best

    def _directed_twin(self) -> "_AttackProblem":
        if not hasattr(self, "_twin"):
            twin = object.__new__(_AttackProblem)
            twin.__dict__.update(self.__dict__)
            twin.directed = True
            self._twin = twin
        return self._twin

    def _directed_seed(self, r: np.ndarray) -> PerturbationDelta | None:
        """Symmetrize the directed relaxation's attack into a feasible
        undirected flip set, best directed flips first."""
        drun = self._directed_twin()._iterate(r, np.arange(self.n), None)
        iu, ju = np.nonzero(drun.flip)
        if len(iu) == 0:
            return None
        v = drun.value
        scored = []
        for i, j in zip(iu.tolist(), ju.tolist()):
            s = drun.flip[i, j]
            benefit = v[j] if s == REMOVE else -v[j]
            scored.append((-benefit, i, j, int(s)))
        scored.sort()
        used = np.zeros(self.n, dtype=np.int64)
        taken = {}
        for _, i, j, s in scored:
            key = (min(i, j), max(i, j))
            if key in taken:
                continue
            if used[i] + 1 > self.budgets[i] or used[j] + 1 > self.budgets[j]:
                continue
            taken[key] = s
            used[i] += 1
            used[j] += 1
        if not taken:
            return None
        return PerturbationDelta(
            [(u, v_, s) for (u, v_), s in taken.items()], directed=False
        )

    def _iterate(
        self,
        r: np.ndarray,
        objective_nodes: np.ndarray,
        warm: PerturbationDelta | None = None,
        order: np.ndarray | None = None,
    ) -> AttackRun:
        flip = self.delta_to_flip(warm)
        sweep = self._sweep_directed if self.directed else self._sweep_undirected
        if order is None:
            order = np.arange(self.n)
        trace = []
        best = None  # (objective over objective_nodes, flip, value)
        best_total = None  # value sum over every node, drives plateau stop
        stalled = 0
        for sweeps in range(1, MAX_SWEEPS + 1):
            v = self.evaluate(flip, r)
            trace.append(v)
            obj = float(v[objective_nodes].sum())
            if best is None or obj < best[0] - 1e-15:
                best = (obj, flip, v)
            total = float(v.sum())
            if best_total is None or total < best_total - 1e-12 * (1.0 + abs(best_total)):
                best_total = total
                stalled = 0
            else:
                stalled += 1
                if stalled >= PLATEAU_SWEEPS:
                    # coordinate updates are cycling without progress; treat
                    # the best state as (practically) converged
                    _, bflip, bv = best
                    return AttackRun(bflip, bv, True, sweeps, trace)
            new_flip, changed = sweep(flip, v, r, order)
            if not changed:
                # fixed point: exact per-node optimum in directed mode; in
                # undirected mode fall back to the best sweep if it was lower
                if self.directed or obj <= best[0] + 1e-15:
                    return AttackRun(flip, v, True, sweeps, trace)
                _, bflip, bv = best
                return AttackRun(bflip, bv, True, sweeps, trace)
            flip = new_flip
        # sweep cap hit: evaluate the last candidate, return the best seen
        v = self.evaluate(flip, r)
        trace.append(v)
        obj = float(v[objective_nodes].sum())
        if obj < best[0] - 1e-15:
            best = (obj, flip, v)
        _, flip, v = best
        return AttackRun(flip, v, False, MAX_SWEEPS, trace)

    # -- local search used to sharpen single-target margins on small graphs

    def polish_target(self, t: int, r: np.ndarray, flip: np.ndarray):
        """Greedy single-flip / swap descent on node ``t``'s margin."""
        flip = flip.copy()
        v_t = float(self.evaluate(flip, r)[t])
        for _ in range(_POLISH_STEP_CAP):
            moves = self._polish_moves(flip)
            best_move, best_val = None, v_t
            for move in moves:
                trial = flip.copy()
                for u, w, s in move:
                    trial[u, w] = s
                    if not self.directed:
                        trial[w, u] = s
                val = float(self.evaluate(trial, r)[t])
                if val < best_val - 1e-12 * (1.0 + abs(best_val)):
                    best_move, best_val = move, val
            if best_move is None:
                break
            for u, w, s in best_move:
                flip[u, w] = s
                if not self.directed:
                    flip[w, u] = s
            v_t = best_val
        return flip, v_t

    def _polish_moves(self, flip):
        used = (
            np.count_nonzero(flip, axis=1)
            if not self.directed
            else np.count_nonzero(flip, axis=1)
        )
        if self.directed:
            active = [(int(i), int(j)) for i, j in zip(*np.nonzero(flip))]
        else:
            active = [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(flip, k=1)))]
        outs = [((u, v, 0.0),) for u, v in active]
        ins = []
        for u in range(self.n):
            if self.directed and self.budgets[u] == 0:
                continue
            for v in np.flatnonzero(self.allowed[u]):
                v = int(v)
                if not self.directed and v <= u:
                    continue
                if flip[u, v] != 0:
                    continue
                if self.directed:
                    if used[u] + 1 > self.budgets[u]:
                        continue
                else:
                    if used[u] + 1 > self.budgets[u] or used[v] + 1 > self.budgets[v]:
                        continue
                sign = REMOVE if self.base_nb[u, v] else ADD
                ins.append(((u, v, float(sign)),))
        moves = outs + ins
        # swaps: revert one active flip, apply one inactive one
        for (out_move,) in outs:
            ou, ov, _ = out_move
            for u in range(self.n):
                for v in np.flatnonzero(self.allowed[u]):
                    v = int(v)
                    if not self.directed and v <= u:
                        continue
                    if flip[u, v] != 0 or (u, v) == (ou, ov):
                        continue
                    trial_used = used.copy()
                    trial_used[ou] -= 1
                    if not self.directed:
                        trial_used[ov] -= 1
                    if self.directed:
                        if trial_used[u] + 1 > self.budgets[u]:
                            continue
                    else:
                        if (
                            trial_used[u] + 1 > self.budgets[u]
                            or trial_used[v] + 1 > self.budgets[v]
                        ):
                            continue
                    sign = REMOVE if self.base_nb[u, v] else ADD
                    moves.append((out_move, (u, v, float(sign))))
        if self.n <= _DEEP_POLISH_LIMIT:
            # coordinated pairs of applications / reversions
            for a in range(len(ins)):
                (iu, iv, isgn) = ins[a][0]
                for b in range(a + 1, len(ins)):
                    (ju, jv, jsgn) = ins[b][0]
                    trial_used = used.copy()
                    trial_used[iu] += 1
                    if not self.directed:
                        trial_used[iv] += 1
                    if self.directed:
                        if trial_used[ju] + 1 > self.budgets[ju]:
                            continue
                    else:
                        if (
                            trial_used[ju] + 1 > self.budgets[ju]
                            or trial_used[jv] + 1 > self.budgets[jv]
                        ):
                            continue
                    moves.append((ins[a][0], ins[b][0]))
            for a in range(len(outs)):
                for b in range(a + 1, len(outs)):
                    moves.append((outs[a][0], outs[b][0]))
        return moves


# ---------------------------------------------------------------------------
# Public certification operations


@dataclass
class CertificationResult:
    """Per-target worst-case certificates plus the attacks that set them."""

    targets: tuple
    worst_margin: np.ndarray
    worst_class: np.ndarray
    robust: np.ndarray
    worst_delta: dict  # target -> PerturbationDelta
    converged: bool
    pair_deltas: dict  # (ref class, challenger) -> PerturbationDelta

    def robust_count(self) -> int:
        return int(self.robust.sum())

    def margin_of(self, t: int) -> float:
        return float(self.worst_margin[self.targets.index(t)])

    def total_margin(self) -> float:
        return float(self.worst_margin.sum())

    def to_csv_text(self) -> str:
        lines = ["node,worst_margin,worst_class,robust"]
        for idx, t in enumerate(self.targets):
            lines.append(
                f"{t},{self.worst_margin[idx]!r},{self.worst_class[idx]},"
                f"{str(bool(self.robust[idx])).lower()}"
            )
        return "\n".join(lines) + "\n"

    def deltas_to_json(self) -> str:
        obj = {
            str(t): {
                "directed": d.directed,
                "flips": sorted([u, v, s] for u, v, s in d.flips),
            }
            for t, d in self.worst_delta.items()
        }
        return json.dumps(obj, indent=2, sort_keys=True)


def _class_pair_runs(problem, l, y, targets, warm=None):
    """Run one attack per (reference class, challenger class) pair."""
    warm = warm or {}
    runs = {}
    classes = sorted(set(int(y[t]) for t in targets))
    for c1 in classes:
        members = np.array([t for t in targets if y[t] == c1], dtype=np.int64)
        for c2 in range(l.k):
            if c2 == c1:
                continue
            r = l.h[:, c1] - l.h[:, c2]
            runs[(c1, c2)] = problem.run(r, members, warm.get((c1, c2)))
    return runs


def certify_graph(
    targets,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
    mask: ImmuneMask,
    warm: dict | None = None,
) -> CertificationResult:
    """Certify every target: worst-case margin, worst class, robust flag.

    A target is certifiably robust iff its minimum worst-case margin over
    challenger classes is strictly positive.
    """
    y = l.require_reference()
    targets = tuple(int(t) for t in targets)
    if any(t < 0 or t >= g.n for t in targets):
        raise ValueError("target out of range")
    problem = _AttackProblem(g, ctx, sc, mask)
    runs = _class_pair_runs(problem, l, y, targets, warm)
    one_minus_alpha = 1.0 - ctx.alpha
    polish = (not sc.directed) and g.n <= POLISH_NODE_LIMIT

    worst_margin = np.empty(len(targets))
    worst_class = np.empty(len(targets), dtype=np.int64)
    robust = np.empty(len(targets), dtype=bool)
    worst_delta = {}
    converged = all(run.converged for run in runs.values())
    for idx, t in enumerate(targets):
        c1 = int(y[t])
        best_m, best_k, best_delta = np.inf, -1, None
        for c2 in range(l.k):
            if c2 == c1:
                continue
            run = runs[(c1, c2)]
            m = float(one_minus_alpha * run.value[t])
            flip = run.flip
            if polish:
                r = l.h[:, c1] - l.h[:, c2]
                for start in (flip, np.zeros_like(flip)):
                    pflip, pv = problem.polish_target(t, r, start)
                    pm = float(one_minus_alpha * pv)
                    if pm < m:
                        m, flip = pm, pflip
            if m < best_m:
                best_m, best_k, best_delta = m, c2, flip
        worst_margin[idx] = best_m
        worst_class[idx] = best_k
        robust[idx] = best_m > 0.0
        worst_delta[t] = problem.flip_to_delta(best_delta)
    pair_deltas = {cp: problem.flip_to_delta(run.flip) for cp, run in runs.items()}
    return CertificationResult(
        targets, worst_margin, worst_class, robust, worst_delta, converged, pair_deltas
    )


def worst_case_margin(
    t: int,
    k: int,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
    mask: ImmuneMask,
    warm: PerturbationDelta | None = None,
):
    """Worst-case margin of node ``t`` against class ``k`` and the flip set
    achieving it. Returns ``(margin, delta)``.
    """
    y = l.require_reference()
    if k == y[t]:
        raise ValueError("challenger class equals the reference class")
    problem = _AttackProblem(g, ctx, sc, mask)
    r = l.h[:, int(y[t])] - l.h[:, k]
    run = problem.run(r, np.array([t]), warm)
    m = float((1.0 - ctx.alpha) * run.value[t])
    flip = run.flip
    if not sc.directed and g.n <= POLISH_NODE_LIMIT:
        for start in (flip, np.zeros_like(flip)):
            pflip, pv = problem.polish_target(t, r, start)
            pm = float((1.0 - ctx.alpha) * pv)
            if pm < m:
                m, flip = pm, pflip
    return m, problem.flip_to_delta(flip)


def worst_margin_all_classes(
    t: int,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
    mask: ImmuneMask,
):
    """Minimum worst-case margin over challenger classes.

    Returns ``(margin, worst_class, delta)``; margin ties go to the smallest
    class id.
    """
    res = certify_graph([t], g, ctx, l, sc, mask)
    return float(res.worst_margin[0]), int(res.worst_class[0]), res.worst_delta[t]


# ---------------------------------------------------------------------------
# Brute-force oracle


def admissible_pairs(g: Graph, sc: PerturbationScenario, mask: ImmuneMask):
    """Pairs the attacker could conceivably flip: unprotected, with budget
    at the charged endpoint(s). Ordered pairs in directed mode.
    """
    budgets = sc.local_budget.values(g)
    allowed = mask.allowed_matrix(g.n)
    pairs = []
    if sc.directed:
        for i in range(g.n):
            if budgets[i] < 1:
                continue
            for j in np.flatnonzero(allowed[i]):
                pairs.append((i, int(j)))
    else:
        for i in range(g.n):
            for j in np.flatnonzero(allowed[i]):
                j = int(j)
                if j <= i:
                    continue
                if budgets[i] >= 1 and budgets[j] >= 1:
                    pairs.append((i, j))
    return pairs, budgets


def _feasible_subsets(pairs, budgets, directed, global_budget):
    """Yield every budget-feasible subset of pair indices (DFS order)."""
    npairs = len(pairs)
    used = dict()
    chosen = []

    def charge(i, amount):
        used[i] = used.get(i, 0) + amount

    def rec(start, total):
        yield tuple(chosen)
        if global_budget is not None and total >= global_budget:
            return
        for idx in range(start, npairs):
            i, j = pairs[idx]
            if used.get(i, 0) + 1 > budgets[i]:
                continue
            if not directed and used.get(j, 0) + 1 > budgets[j]:
                continue
            charge(i, 1)
            if not directed:
                charge(j, 1)
            chosen.append(idx)
            yield from rec(idx + 1, total + 1)
            chosen.pop()
            charge(i, -1)
            if not directed:
                charge(j, -1)

    yield from rec(0, 0)


def _batched_margins(base, flips_batch, alpha, r, t):
    """Margins of node ``t`` for a batch of signed flip matrices."""
    adj = base[None, :, :] + flips_batch
    deg = adj.sum(axis=2)
    safe = np.where(deg > 0, deg, 1.0)
    p = adj / safe[:, :, None]
    zero_rows = np.nonzero(deg <= 0)
    p[zero_rows[0], zero_rows[1], zero_rows[1]] = 1.0
    systems = np.eye(base.shape[0])[None, :, :] - alpha * p
    rhs = np.broadcast_to(r[:, None], (len(flips_batch), len(r), 1))
    sol = np.linalg.solve(systems, rhs)
    return (1.0 - alpha) * sol[:, t, 0]


def brute_force_worst_margin(
    t: int,
    k: int,
    g: Graph,
    ctx: PPRContext,
    l: Logits,
    sc: PerturbationScenario,
    mask: ImmuneMask,
    chunk: int = 4096,
):
    """Exact worst-case margin by enumerating every feasible flip subset.

    The only certification path that honors ``sc.global_budget``. Guarded to
    at most ``ORACLE_PAIR_LIMIT`` admissible pairs.
    """
    y = l.require_reference()
    if k == y[t]:
        return 0.0, PerturbationDelta.empty(sc.directed)
    pairs, budgets = admissible_pairs(g, sc, mask)
    if len(pairs) > ORACLE_PAIR_LIMIT:
        raise OracleGuardError(
            f"{len(pairs)} admissible pairs exceeds the enumeration guard "
            f"({ORACLE_PAIR_LIMIT})"
        )
    r = l.h[:, int(y[t])] - l.h[:, k]
    base = g.adjacency.astype(np.float64)
    n = g.n
    signs = np.array(
        [REMOVE if g.adjacency[i, j] else ADD for i, j in pairs], dtype=np.float64
    )

    best_margin = np.inf
    best_subset = None
    batch_subsets = []

    def flush():
        nonlocal best_margin, best_subset
        if not batch_subsets:
            return
        flips = np.zeros((len(batch_subsets), n, n))
        for row, subset in enumerate(batch_subsets):
            for idx in subset:
                i, j = pairs[idx]
                flips[row, i, j] = signs[idx]
                if not sc.directed:
                    flips[row, j, i] = signs[idx]
        margins = _batched_margins(base, flips, ctx.alpha, r, t)
        pick = int(np.argmin(margins))
        if margins[pick] < best_margin:
            best_margin = float(margins[pick])
            best_subset = batch_subsets[pick]
        batch_subsets.clear()

    for subset in _feasible_subsets(pairs, budgets, sc.directed, sc.global_budget):
        batch_subsets.append(subset)
        if len(batch_subsets) >= chunk:
            flush()
    flush()

    flips = [
        (pairs[idx][0], pairs[idx][1], int(signs[idx])) for idx in best_subset
    ]
    return best_margin, PerturbationDelta(flips, directed=sc.directed)
