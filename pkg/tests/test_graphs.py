import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ignn.graphs import Graph, GraphError, batch_graphs, ensure_valid, neighbors, undirected, validate_graph
from ignn.verification import random_graph


def _tri():
    return undirected(np.eye(3), [[0, 1], [1, 2]], [[1.0], [2.0]], [0, 1], graph_label=[5.0])


def test_undirected_duplicates_pairs():
    g = _tri()
    np.testing.assert_array_equal(g.edges, [[0, 1], [1, 0], [1, 2], [2, 1]])
    np.testing.assert_array_equal(g.edge_features[:, 0], [1, 1, 2, 2])
    np.testing.assert_array_equal(g.relation_ids, [0, 0, 1, 1])
    assert validate_graph(g, 2) == []


def test_neighbors_incoming_in_edge_order():
    g = _tri()
    assert neighbors(g, 1) == [(0, 0), (2, 3)]
    assert neighbors(g, 0) == [(1, 1)]
    with pytest.raises(IndexError):
        neighbors(g, 3)


def test_no_edges():
    g = undirected(np.ones((2, 2)), np.zeros((0, 2)), np.zeros((0, 3)))
    assert g.num_edges == 0 and g.d_e == 3
    assert validate_graph(g) == []


def test_validation_reports_every_problem():
    x = np.eye(3)
    x[1, 0] = np.nan
    g = Graph(x, [[0, 5], [1, 0]], np.zeros((2, 2)), [0, 3], graph_label=[1.0], node_labels=np.zeros(3))
    problems = validate_graph(g, num_relations=2)
    text = " | ".join(problems)
    assert "edge 0 (0, 5)" in text
    assert "node_features row 1" in text
    assert "relation id" in text
    assert "both set" in text
    with pytest.raises(GraphError) as ei:
        ensure_valid(g, 2)
    assert len(ei.value.problems) == len(problems)


def test_edge_feature_row_mismatch():
    g = Graph(np.eye(2), [[0, 1]], np.zeros((2, 3)))
    assert any("2 rows for 1 edges" in p for p in validate_graph(g))


def test_batch_offsets_and_split_round_trip():
    rng = np.random.default_rng(0)
    gs = [random_graph(rng, n) for n in (3, 1, 5)]
    b = batch_graphs(gs)
    assert b.num_graphs == 3 and b.num_nodes == 9
    np.testing.assert_array_equal(b.node_offsets, [0, 3, 4, 9])
    np.testing.assert_array_equal(b.node_graph, [0, 0, 0, 1, 2, 2, 2, 2, 2])
    # no edge crosses graphs
    assert (b.node_graph[b.src] == b.node_graph[b.dst]).all()
    np.testing.assert_array_equal(b.edge_graph(), b.node_graph[b.src])
    for a, c in zip(gs, b.split()):
        np.testing.assert_array_equal(a.edges, c.edges)
        np.testing.assert_array_equal(a.node_features, c.node_features)
        np.testing.assert_array_equal(a.edge_features, c.edge_features)
        np.testing.assert_array_equal(a.graph_label, c.graph_label)


def test_batch_mismatch_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(GraphError, match="d_e"):
        batch_graphs([random_graph(rng, 3, d_e=2), random_graph(rng, 3, d_e=3)])
    with pytest.raises(GraphError, match="graph_label"):
        batch_graphs([random_graph(rng, 3, label_dim=1), random_graph(rng, 3, label_dim=2)])
    with pytest.raises(ValueError):
        batch_graphs([])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 9))
def test_permute_preserves_structure(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, node_label_dim=2, label_dim=None)
    perm = rng.permutation(n)
    gp = g.permute(perm)
    assert validate_graph(gp) == []
    # edge k connects the same (relabelled) nodes
    np.testing.assert_array_equal(perm[gp.edges], g.edges)
    np.testing.assert_array_equal(gp.node_labels, g.node_labels[perm])
    deg = np.bincount(g.edges[:, 1], minlength=n)
    np.testing.assert_array_equal(np.bincount(gp.edges[:, 1], minlength=n), deg[perm])
