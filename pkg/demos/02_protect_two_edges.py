#!/usr/bin/env python3
# Edge-level immunization on the karate club: protecting just two node
# pairs (chosen by the mask-gradient greedy) makes several extra members
# certifiably robust, while random pairs do nearly nothing.
import numpy as np

from graphimmune import (
    ImmuneMask,
    PPRContext,
    PerturbationScenario,
    advimmune_edge,
    certify_graph,
    karate,
    karate_labels,
    reference_classes,
    train_linear_logits,
)
from graphimmune.baselines import baseline_edge
from graphimmune.logits import FeatureMatrix

g = karate()
labels = karate_labels()
ctx = PPRContext()
sc = PerturbationScenario(edge_mode="directed-fragile")
targets = range(g.n)

fm = FeatureMatrix(np.eye(g.n), labels=labels, train_mask=np.ones(g.n, bool))
scores = train_linear_logits(fm, epochs=300, lr=0.5, seed=0)
scores = scores.with_reference(reference_classes(g, ctx, scores))

before = certify_graph(targets, g, ctx, scores, sc, ImmuneMask.empty())
print(f"robust before immunization: {before.robust_count()}/{g.n}")

mask, run = advimmune_edge(targets, g, ctx, scores, sc, budget=2)
after = certify_graph(targets, g, ctx, scores, sc, mask)
print(f"protected pairs: {sorted(mask.protected_pairs)}")
print(f"robust after: {after.robust_count()}/{g.n} "
      f"(+{after.robust_count() - before.robust_count()})")
print("objective trace (sum of worst-case margins):",
      [f"{v:.2f}" for v in run.objective_trace])

newly = [t for i, t in enumerate(after.targets)
         if after.robust[i] and not before.robust[i]]
print(f"members rescued by two protected pairs: {newly}")

# the same budget spent at random barely moves the needle
counts = []
for seed in range(5):
    rmask = baseline_edge("random", g, np.eye(g.n), labels, 2, seed=seed)
    counts.append(certify_graph(targets, g, ctx, scores, sc, rmask).robust_count())
print(f"random two pairs, five draws: robust counts {counts} "
      f"(mean {np.mean(counts):.1f} vs {after.robust_count()})")
