import numpy as np
import pytest

from graphimmune.graph import (
    ADD,
    REMOVE,
    Graph,
    GraphError,
    PerturbationDelta,
    apply_delta,
    karate,
    karate_labels,
    load_edge_list,
    load_labels,
    perturbed_adjacency,
)


def test_load_edge_list_path_graph():
    g = load_edge_list("0 1\n1 2")
    assert g.n == 3
    assert g.degrees.tolist() == [1, 2, 1]


def test_load_edge_list_header_allows_isolated_nodes():
    g = load_edge_list("n=2\n")
    assert g.n == 2
    assert g.num_edges == 0


def test_load_edge_list_rejects_self_loop():
    with pytest.raises(GraphError, match="line 1.*self-loop"):
        load_edge_list("0 0")


def test_load_edge_list_rejects_malformed_line():
    with pytest.raises(GraphError, match="line 2"):
        load_edge_list("0 1\n0 1 2")


def test_load_edge_list_rejects_id_overflow_with_header():
    with pytest.raises(GraphError, match="line 2.*n=2"):
        load_edge_list("n=2\n0 5")


def test_load_edge_list_comments_and_blank_lines():
    g = load_edge_list("# a comment\n\n0 1 # trailing\n1 2\n")
    assert g.n == 3 and g.num_edges == 2


def test_load_edge_list_remaps_sparse_ids():
    g = load_edge_list("10 30\n30 20")
    assert g.n == 3
    assert g.original_ids == (10, 20, 30)
    # 10->0, 20->1, 30->2
    assert g.has_edge(0, 2) and g.has_edge(1, 2) and not g.has_edge(0, 1)


def test_load_edge_list_order_insensitive():
    lines = ["0 1", "1 2", "2 3", "0 3"]
    rng = np.random.default_rng(0)
    base = load_edge_list("\n".join(lines))
    for _ in range(5):
        perm = [lines[i] for i in rng.permutation(len(lines))]
        assert load_edge_list("\n".join(perm)) == base


def test_load_edge_list_duplicate_edges_collapse():
    g = load_edge_list("0 1\n1 0\n0 1")
    assert g.num_edges == 1


def test_karate_shape():
    g = karate()
    assert g.n == 34
    assert g.num_edges == 78
    assert int(np.argmax(g.degrees)) == 33
    labels = karate_labels()
    assert labels.shape == (34,)
    assert set(labels.tolist()) == {0, 1}


def test_graph_is_immutable():
    g = karate()
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = 0


def test_apply_delta_path_to_triangle():
    g = load_edge_list("0 1\n1 2")
    d = PerturbationDelta([(0, 2, ADD)])
    t = apply_delta(g, d)
    assert t.num_edges == 3
    assert t.has_edge(0, 2)
    assert g.num_edges == 2  # input untouched


def test_apply_delta_empty_is_identity():
    g = karate()
    assert apply_delta(g, PerturbationDelta.empty()) == g


def test_apply_delta_can_isolate_a_node():
    g = load_edge_list("0 1\n0 2\n1 2")
    d = PerturbationDelta([(0, 1, REMOVE), (0, 2, REMOVE)])
    t = apply_delta(g, d)
    assert t.degrees.tolist() == [0, 1, 1]


def test_apply_delta_rejects_inconsistent_flips():
    g = load_edge_list("0 1\n1 2")
    with pytest.raises(GraphError, match="adds existing"):
        apply_delta(g, PerturbationDelta([(0, 1, ADD)]))
    with pytest.raises(GraphError, match="removes absent"):
        apply_delta(g, PerturbationDelta([(0, 2, REMOVE)]))


def test_delta_rejects_duplicate_pair():
    with pytest.raises(GraphError, match="twice"):
        PerturbationDelta([(0, 1, ADD), (1, 0, REMOVE)])


def test_delta_rejects_bad_sign_and_self_loop():
    with pytest.raises(GraphError):
        PerturbationDelta([(0, 1, 2)])
    with pytest.raises(GraphError):
        PerturbationDelta([(3, 3, ADD)])


def test_apply_negate_roundtrip_on_random_graphs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(3, 10))
        adj = np.triu((rng.random((n, n)) < 0.5).astype(int), 1)
        g = Graph(n, zip(*np.nonzero(adj)))
        flips = []
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.3:
                    flips.append((i, j, REMOVE if g.has_edge(i, j) else ADD))
        d = PerturbationDelta(flips)
        h = apply_delta(g, d)
        assert apply_delta(h, d.negate()) == g
        # degrees always match recomputed neighbor-list lengths
        assert h.degrees.tolist() == [len(h.neighbors(i)) for i in range(n)]


def test_directed_delta_gives_asymmetric_adjacency():
    g = load_edge_list("0 1\n1 2")
    d = PerturbationDelta([(1, 0, REMOVE)], directed=True)
    adj = perturbed_adjacency(g, d)
    assert adj[1, 0] == 0 and adj[0, 1] == 1


def test_directed_delta_cannot_build_graph():
    g = load_edge_list("0 1")
    with pytest.raises(GraphError, match="directed"):
        apply_delta(g, PerturbationDelta([(0, 1, REMOVE)], directed=True))


def test_incident_counts_charging():
    d = PerturbationDelta([(0, 1, ADD), (1, 2, ADD)])
    assert d.incident_counts(4).tolist() == [1, 2, 1, 0]
    dd = PerturbationDelta([(0, 1, ADD), (1, 2, ADD)], directed=True)
    assert dd.incident_counts(4).tolist() == [1, 1, 0, 0]


def test_load_labels_roundtrip():
    labels = load_labels("node_id,label\n0,1\n1,0\n2,1\n", n=4)
    assert labels.tolist() == [1, 0, 1, 0]
    with pytest.raises(GraphError):
        load_labels("0,1\n0,2\n")
