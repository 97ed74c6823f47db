import numpy as np
import pytest

from graphimmune.graph import Graph, karate
from graphimmune.logits import (
    FeatureMatrix,
    Logits,
    LogitsError,
    diffused_scores,
    fit_linear_softmax,
    load_logits,
    reference_classes,
    train_linear_logits,
)
from graphimmune.ppr import PPRContext


def test_load_logits_basic():
    l = load_logits("1,0\n0,1", k=2)
    assert np.allclose(l.h, np.eye(2))
    assert l.y_ref is None


def test_load_logits_ragged_row():
    with pytest.raises(LogitsError, match="line 2"):
        load_logits("1,0\n1,0,0", k=2)


def test_load_logits_nan_cell():
    with pytest.raises(LogitsError, match="non-finite"):
        load_logits("1,nan\n0,1", k=2)


def test_load_logits_wrong_width():
    with pytest.raises(LogitsError, match="columns"):
        load_logits("1,0,0\n0,1,0", k=2)


def test_logits_row_count_checked_at_use_time(ctx):
    g = Graph(3, [(0, 1)])
    l = load_logits("1,0\n0,1", k=2)
    with pytest.raises(LogitsError, match="rows"):
        diffused_scores(g, ctx, l)


def test_separable_toy_reaches_full_train_accuracy():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-3, 0.3, size=(20, 2)), rng.normal(3, 0.3, size=(20, 2))])
    labels = np.repeat([0, 1], 20)
    f = FeatureMatrix(x, labels=labels, train_mask=np.ones(40, bool))
    l = train_linear_logits(f, epochs=200, lr=0.5, seed=0)
    assert (np.argmax(l.h, axis=1) == labels).mean() == 1.0


def test_zero_features_learn_class_frequencies():
    x = np.zeros((8, 3))
    labels = np.array([0, 0, 0, 0, 0, 0, 1, 1])  # 75% / 25%
    w, b, _ = fit_linear_softmax(x, labels, np.ones(8, bool), epochs=5000, lr=1.0, seed=0)
    h = x @ w + b
    assert np.allclose(h, h[0])  # every row equals the bias
    p = np.exp(b) / np.exp(b).sum()
    assert np.allclose(p, [0.75, 0.25], atol=1e-3)


def test_training_is_deterministic():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(12, 4))
    labels = rng.integers(0, 2, size=12)
    f = FeatureMatrix(x, labels=labels, train_mask=np.ones(12, bool))
    a = train_linear_logits(f, epochs=50, lr=0.3, seed=9)
    b = train_linear_logits(f, epochs=50, lr=0.3, seed=9)
    assert np.array_equal(a.h, b.h)


def test_empty_train_set_rejected():
    f = FeatureMatrix(np.ones((4, 2)), labels=np.zeros(4, int), train_mask=np.zeros(4, bool))
    with pytest.raises(LogitsError, match="empty"):
        train_linear_logits(f)


def test_loss_non_increasing_at_sane_lr():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 5))
    labels = rng.integers(0, 3, size=30)
    _, _, losses = fit_linear_softmax(x, labels, np.ones(30, bool), epochs=300, lr=0.1, seed=0)
    assert np.all(np.diff(losses) <= 1e-12)


def test_divergent_lr_is_flagged():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 4)) * 10
    labels = rng.integers(0, 2, size=20)
    f = FeatureMatrix(x, labels=labels, train_mask=np.ones(20, bool))
    with pytest.warns(RuntimeWarning, match="loss increased"):
        train_linear_logits(f, epochs=100, lr=50.0, seed=0)


def test_reference_classes_on_empty_graph_is_row_argmax(ctx):
    g = Graph(3, [])
    l = Logits(np.eye(3))
    assert reference_classes(g, ctx, l).tolist() == [0, 1, 2]


def test_reference_classes_tie_breaks_to_smallest(ctx):
    g = Graph(3, [(0, 1), (1, 2)])
    l = Logits(np.ones((3, 3)))
    assert reference_classes(g, ctx, l).tolist() == [0, 0, 0]


def test_reference_classes_invariant_to_per_row_offsets(ctx):
    rng = np.random.default_rng(4)
    from tests.conftest import random_graph

    g = random_graph(rng, 15)
    h = rng.normal(size=(15, 3))
    base = reference_classes(g, ctx, Logits(h))
    shifted = h + rng.normal(size=(15, 1))  # same offset across each row
    assert np.array_equal(base, reference_classes(g, ctx, Logits(shifted)))


def test_karate_reference_matches_independent_solve(ctx):
    g = karate()
    rng = np.random.default_rng(5)
    x = np.eye(g.n)
    labels = (rng.random(g.n) < 0.5).astype(int)
    f = FeatureMatrix(x, labels=labels, train_mask=np.ones(g.n, bool))
    l = train_linear_logits(f, epochs=100, lr=0.5, seed=0)
    got = reference_classes(g, ctx, l)
    # independent dense recompute of the diffused argmax
    deg = g.degrees.astype(float)
    p = g.adjacency / deg[:, None]
    pi = (1 - ctx.alpha) * np.linalg.inv(np.eye(g.n) - ctx.alpha * p)
    assert np.array_equal(got, np.argmax(pi @ l.h, axis=1))


def test_reference_class_bounds_checked():
    with pytest.raises(LogitsError):
        Logits(np.ones((3, 2)), y_ref=[0, 1, 2])
