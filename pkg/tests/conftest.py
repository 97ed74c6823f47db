"""Shared builders for random test instances."""

import numpy as np
import pytest

from graphimmune.certify import (
    BudgetRule,
    ImmuneMask,
    PerturbationScenario,
    admissible_pairs,
)
from graphimmune.graph import Graph
from graphimmune.logits import Logits, reference_classes
from graphimmune.ppr import PPRContext


@pytest.fixture
def ctx():
    return PPRContext()


def random_graph(rng, n, p=0.4):
    adj = (rng.random((n, n)) < p).astype(int)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    return Graph(n, zip(*np.nonzero(np.triu(adj, 1))))


def random_logits(rng, g, k=2, ctx=None):
    l = Logits(rng.normal(size=(g.n, k)))
    return l.with_reference(reference_classes(g, ctx or PPRContext(), l))


def oracle_instance(rng, n_max=8, k=2, max_budget=2, max_pairs=13, edge_mode="directed-fragile"):
    """A random instance small enough for brute-force enumeration.

    Random pairs are protected until the admissible set fits the budget of
    the enumerator, which also exercises mask filtering.
    """
    ctx = PPRContext()
    n = int(rng.integers(4, n_max + 1))
    g = random_graph(rng, n)
    l = random_logits(rng, g, k, ctx)
    budgets = rng.integers(0, max_budget + 1, size=n)
    sc = PerturbationScenario(
        local_budget=BudgetRule.explicit(budgets), edge_mode=edge_mode
    )
    mask = ImmuneMask.empty()
    pairs, _ = admissible_pairs(g, sc, mask)
    while len(pairs) > max_pairs:
        u, v = pairs[int(rng.integers(len(pairs)))]
        mask = mask.with_pair(u, v)
        pairs, _ = admissible_pairs(g, sc, mask)
    return g, l, sc, mask


def oracle_instance_unmasked(
    rng, n_max=7, k=2, max_budget=2, max_pairs=16, edge_mode="directed-fragile"
):
    """Like :func:`oracle_instance` but with an empty mask: the admissible
    set is trimmed by zeroing budgets instead, so immunization runs (which
    build their own masks from scratch) stay inside the enumeration guard.
    """
    ctx = PPRContext()
    n = int(rng.integers(4, n_max + 1))
    g = random_graph(rng, n)
    l = random_logits(rng, g, k, ctx)
    budgets = rng.integers(0, max_budget + 1, size=n)
    sc = PerturbationScenario(
        local_budget=BudgetRule.explicit(budgets), edge_mode=edge_mode
    )
    pairs, _ = admissible_pairs(g, sc, ImmuneMask.empty())
    while len(pairs) > max_pairs:
        hot = int(rng.integers(n))
        if budgets[hot] == 0:
            continue
        budgets[hot] = 0
        sc = PerturbationScenario(
            local_budget=BudgetRule.explicit(budgets), edge_mode=edge_mode
        )
        pairs, _ = admissible_pairs(g, sc, ImmuneMask.empty())
    return g, l, sc
