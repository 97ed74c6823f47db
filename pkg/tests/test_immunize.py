from itertools import combinations

import numpy as np
import pytest

from graphimmune.certify import (
    BudgetRule,
    ImmuneMask,
    PerturbationScenario,
    brute_force_worst_margin,
    certify_graph,
    margin,
)
from graphimmune.gradients import meta_gradient_edge
from graphimmune.graph import Graph, PerturbationDelta
from graphimmune.immunize import (
    _EdgeScorer,
    advimmune_edge,
    advimmune_node,
    robustness_gain,
    total_worst_margin,
)
from graphimmune.logits import Logits
from graphimmune.ppr import PPRContext
from tests.conftest import (
    oracle_instance,
    oracle_instance_unmasked,
    random_graph,
    random_logits,
)


def exact_objective(g, ctx, l, sc, mask):
    """Σ over nodes of the enumerated minimum margin (the exact objective)."""
    return sum(
        brute_force_worst_margin(t, 1 - int(l.y_ref[t]), g, ctx, l, sc, mask)[0]
        for t in range(g.n)
    )


def test_total_worst_margin_zero_budgets_is_clean_sum(ctx):
    rng = np.random.default_rng(0)
    g = random_graph(rng, 6)
    l = random_logits(rng, g)
    sc = PerturbationScenario(local_budget=BudgetRule.constant(0))
    got = total_worst_margin(range(g.n), g, ctx, l, sc, ImmuneMask.empty())
    want = sum(margin(t, 1 - int(l.y_ref[t]), g, ctx, l) for t in range(g.n))
    assert got == pytest.approx(want, abs=1e-9)


def test_total_worst_margin_full_mask_matches_zero_budgets(ctx):
    rng = np.random.default_rng(1)
    g = random_graph(rng, 6)
    l = random_logits(rng, g)
    sc = PerturbationScenario(local_budget=BudgetRule.constant(2))
    full = ImmuneMask(
        frozenset((i, j) for i in range(6) for j in range(i + 1, 6)), frozenset()
    )
    got = total_worst_margin(range(g.n), g, ctx, l, sc, full)
    want = sum(margin(t, 1 - int(l.y_ref[t]), g, ctx, l) for t in range(g.n))
    assert got == pytest.approx(want, abs=1e-9)


def test_advimmune_edge_zero_budget(ctx):
    rng = np.random.default_rng(2)
    g, l, sc, _ = oracle_instance(rng)
    mask, run = advimmune_edge(range(g.n), g, ctx, l, sc, budget=0)
    assert mask == ImmuneMask.empty()
    assert len(run.objective_trace) == 1
    assert run.objective_trace[0] == pytest.approx(
        total_worst_margin(range(g.n), g, ctx, l, sc, ImmuneMask.empty()), abs=1e-9
    )


def test_advimmune_edge_single_candidate_restores_clean_margin(ctx):
    # one target, one admissible pair: protecting it must return the clean sum
    g = Graph(3, [(0, 1), (1, 2)])
    l = Logits(np.array([[2.0, 0.0], [1.0, 0.5], [0.0, 1.5]]), y_ref=[0, 0, 1])
    sc = PerturbationScenario(
        local_budget=BudgetRule.explicit([1, 1, 0]), edge_mode="directed-fragile"
    )
    clean = margin(0, 1, g, ctx, l)
    mask, run = advimmune_edge([0], g, ctx, l, sc, budget=1)
    assert mask.edge_budget_used == 1
    after, _ = brute_force_worst_margin(0, 1, g, ctx, l, sc, mask)
    pair = next(iter(mask.protected_pairs))
    # the protected pair is the single strongest attack pair (0,1)
    assert pair == (0, 1)
    assert after <= clean + 1e-12


def test_advimmune_edge_objective_trace_non_decreasing_exact(ctx):
    rng = np.random.default_rng(3)
    for _ in range(6):
        g, l, sc = oracle_instance_unmasked(rng, n_max=6)
        mask, run = advimmune_edge(range(g.n), g, ctx, l, sc, budget=2)
        trace = run.objective_trace
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
        # recompute the achieved objective with the enumerator
        assert exact_objective(g, ctx, l, sc, mask) >= exact_objective(
            g, ctx, l, sc, ImmuneMask.empty()
        ) - 1e-9


def test_advimmune_edge_sandwich_against_exhaustive_best(ctx):
    rng = np.random.default_rng(4)
    sandwiched = trials = 0
    while trials < 5:
        g, l, sc = oracle_instance_unmasked(rng, n_max=6, max_budget=1)
        from graphimmune.certify import admissible_pairs

        pairs, _ = admissible_pairs(g, sc, ImmuneMask.empty())
        pool = sorted({(min(u, v), max(u, v)) for u, v in pairs})
        if not 2 <= len(pool) <= 8:
            continue
        trials += 1
        budget = 2
        mask, _ = advimmune_edge(range(g.n), g, ctx, l, sc, budget=budget)
        greedy_j = exact_objective(g, ctx, l, sc, mask)
        all_j = [
            exact_objective(
                g, ctx, l, sc, ImmuneMask(frozenset(sel), frozenset())
            )
            for sel in combinations(pool, min(budget, len(pool)))
        ]
        assert greedy_j <= max(all_j) + 1e-9
        if greedy_j >= float(np.median(all_j)) - 1e-9:
            sandwiched += 1
    assert sandwiched >= 4  # greedy beats the median pair-set almost always


def test_edge_scorer_matches_meta_gradient_accumulation(ctx):
    rng = np.random.default_rng(5)
    g, l, sc, mask = oracle_instance(rng, edge_mode="undirected-pair")
    cert = certify_graph(range(g.n), g, ctx, l, sc, mask)
    scorer = _EdgeScorer(g, ctx, l, mask, cert.pair_deltas)
    fast = scorer.scores(range(g.n), l.y_ref)
    wc = np.full(g.n, -1)
    for i, t in enumerate(cert.targets):
        wc[t] = cert.worst_class[i]
    slow = {}
    for (c1, c2), delta in sorted(cert.pair_deltas.items()):
        members = [t for t in range(g.n) if l.y_ref[t] == c1 and wc[t] == c2]
        if not members:
            continue
        active = PerturbationDelta(
            [f for f in delta.flips if not mask.is_protected(f[0], f[1])],
            directed=delta.directed,
        )
        ghat = g.adjacency + active.signed_matrix(g.n)
        mg = meta_gradient_edge(members, ghat, wc, active, mask, ctx, l)
        for pair, val in mg.edge_value().items():
            key = (min(pair), max(pair))
            slow[key] = slow.get(key, 0.0) + val
    assert set(fast) == set(slow)
    for pair in fast:
        assert fast[pair] == pytest.approx(slow[pair], abs=1e-10)


def test_robustness_gain_nonnegative_and_matches_oracle(ctx):
    rng = np.random.default_rng(6)
    for _ in range(6):
        g, l, sc, mask0 = oracle_instance(rng, n_max=7, edge_mode="directed-fragile")
        cert = certify_graph(range(g.n), g, ctx, l, sc, mask0)
        from graphimmune.immunize import ImmunizationRun

        state = ImmunizationRun(mask0, [], 1, [], [], 1, "ok", cert)
        for j in range(g.n):
            if j in mask0.protected_nodes:
                continue
            gain = robustness_gain(j, state, range(g.n), g, ctx, l, sc)
            assert gain >= -1e-9
            # frozen-challenger enumeration oracle
            idx = {t: i for i, t in enumerate(cert.targets)}
            old = sum(
                brute_force_worst_margin(
                    t, int(cert.worst_class[idx[t]]), g, ctx, l, sc, mask0
                )[0]
                for t in range(g.n)
            )
            new = sum(
                brute_force_worst_margin(
                    t, int(cert.worst_class[idx[t]]), g, ctx, l, sc, mask0.with_node(j)
                )[0]
                for t in range(g.n)
            )
            assert gain == pytest.approx(new - old, abs=1e-9)


def test_robustness_gain_zero_for_untouched_node(ctx):
    # node 3 is isolated and unbudgeted: protecting it changes nothing
    g = Graph(4, [(0, 1), (1, 2)])
    l = Logits(np.array([[2.0, 0.0], [1.0, 0.5], [0.0, 1.5], [1.0, 0.0]]), y_ref=[0, 0, 1, 0])
    sc = PerturbationScenario(
        local_budget=BudgetRule.explicit([1, 1, 1, 0]), edge_mode="directed-fragile"
    )
    cert = certify_graph(range(4), g, ctx=PPRContext(), l=l, sc=sc, mask=ImmuneMask.empty())
    from graphimmune.immunize import ImmunizationRun

    touched = set()
    for d in cert.pair_deltas.values():
        touched |= d.touched_nodes()
    state = ImmunizationRun(ImmuneMask.empty(), [], 1, [], [], 1, "ok", cert)
    for j in range(4):
        if j in touched:
            continue
        gain = robustness_gain(j, state, range(4), g, PPRContext(), l, sc)
        assert gain == pytest.approx(0.0, abs=1e-9)


def test_advimmune_node_zero_budget(ctx):
    rng = np.random.default_rng(7)
    g, l, sc, _ = oracle_instance(rng)
    mask, run = advimmune_node(range(g.n), g, ctx, l, sc, budget=0)
    assert mask == ImmuneMask.empty()
    assert run.update_counts == []


def test_advimmune_node_candidate_count_precondition(ctx):
    rng = np.random.default_rng(8)
    g, l, sc, _ = oracle_instance(rng)
    with pytest.raises(ValueError, match="candidate_count"):
        advimmune_node(range(g.n), g, ctx, l, sc, budget=3, candidate_count=2)


def full_update_greedy_nodes(targets, g, ctx, l, sc, budget):
    """Oracle: recompute every candidate's gain each round, pick the max
    (ties to the smallest id)."""
    from graphimmune.immunize import ImmunizationRun

    mask = ImmuneMask.empty()
    cert = certify_graph(targets, g, ctx, l, sc, mask)
    chosen = []
    for _ in range(budget):
        state = ImmunizationRun(mask, [], 1, [], [], budget, "ok", cert)
        gains = {}
        for j in range(g.n):
            if j in mask.protected_nodes:
                continue
            gains[j] = robustness_gain(j, state, targets, g, ctx, l, sc)
        j_star = max(sorted(gains), key=lambda j: (gains[j], -j))
        chosen.append(j_star)
        mask = mask.with_node(j_star)
        cert = certify_graph(targets, g, ctx, l, sc, mask, warm=cert.pair_deltas)
    return chosen


def test_celf_first_selection_always_matches_full_greedy(ctx):
    # round one computes every candidate's gain, so the first pick is the
    # true argmax by construction
    rng = np.random.default_rng(9)
    for _ in range(8):
        g, l, sc = oracle_instance_unmasked(rng, n_max=7)
        mask, run = advimmune_node(
            range(g.n), g, ctx, l, sc, budget=1, candidate_count=g.n
        )
        full = full_update_greedy_nodes(tuple(range(g.n)), g, ctx, l, sc, 1)
        if run.selections:
            assert run.selections == full


def test_celf_matches_full_greedy_on_most_instances(ctx):
    """Lazy evaluation relies on gains not growing as the mask fills in;
    exact worst-case gains do occasionally grow (the re-routed attack can
    lean harder on a remaining node), so equality with full-update greedy
    is the norm but not a theorem. The acceptance suite tracks the strict
    criterion; here we pin the typical-case behavior."""
    rng = np.random.default_rng(9)
    matches = total = 0
    while total < 12:
        g, l, sc = oracle_instance_unmasked(rng, n_max=7)
        mask, run = advimmune_node(
            range(g.n), g, ctx, l, sc, budget=2, candidate_count=g.n
        )
        if run.status == "saturated" or not run.selections:
            continue
        total += 1
        full = full_update_greedy_nodes(tuple(range(g.n)), g, ctx, l, sc, 2)
        if set(run.selections) == set(full[: len(run.selections)]):
            matches += 1
    assert matches >= int(0.6 * total)


def test_advimmune_node_tie_rule_smallest_ids(ctx):
    # two interchangeable components (swap nodes 0<->2, 1<->3, classes 0<->1
    # maps the instance to itself): all gains tie, ids break them
    g = Graph(4, [(0, 1), (2, 3)])
    h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    l = Logits(h, y_ref=[0, 1, 0, 1])
    sc = PerturbationScenario(
        local_budget=BudgetRule.constant(1), edge_mode="directed-fragile"
    )
    mask, run = advimmune_node(range(4), g, ctx, l, sc, budget=2, candidate_count=4)
    assert run.status != "saturated"
    assert run.selections == [0, 1]


def test_immunization_deterministic(ctx):
    rng1 = np.random.default_rng(10)
    g, l, sc, _ = oracle_instance(rng1, n_max=7)
    a_mask, a_run = advimmune_edge(range(g.n), g, ctx, l, sc, budget=2, seed=3)
    b_mask, b_run = advimmune_edge(range(g.n), g, ctx, l, sc, budget=2, seed=3)
    assert a_mask == b_mask and a_run.objective_trace == b_run.objective_trace
    c_mask, c_run = advimmune_node(range(g.n), g, ctx, l, sc, budget=2, candidate_count=g.n)
    d_mask, d_run = advimmune_node(range(g.n), g, ctx, l, sc, budget=2, candidate_count=g.n)
    assert c_mask == d_mask and c_run.selections == d_run.selections


def test_protected_items_never_reappear_in_attacks(ctx):
    rng = np.random.default_rng(11)
    g, l, sc, _ = oracle_instance(rng, n_max=7)
    mask, run = advimmune_node(range(g.n), g, ctx, l, sc, budget=2, candidate_count=g.n)
    cert = run.certification
    for delta in cert.pair_deltas.values():
        for u, v, _ in delta.flips:
            assert not mask.is_protected(u, v)
    emask, erun = advimmune_edge(range(g.n), g, ctx, l, sc, budget=2)
    for delta in erun.certification.pair_deltas.values():
        for u, v, _ in delta.flips:
            assert not emask.is_protected(u, v)


def test_saturation_reported_when_nothing_to_attack(ctx):
    g = Graph(3, [(0, 1), (1, 2)])
    l = Logits(np.array([[3.0, 0.0], [3.0, 0.0], [3.0, 0.0]]), y_ref=[0, 0, 0])
    sc = PerturbationScenario(local_budget=BudgetRule.constant(0))
    mask, run = advimmune_edge(range(3), g, ctx, l, sc, budget=2)
    assert run.status == "saturated"
    assert mask == ImmuneMask.empty()
    mask, run = advimmune_node(range(3), g, ctx, l, sc, budget=2, candidate_count=3)
    assert run.status == "saturated"
