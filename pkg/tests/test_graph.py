import gzip
import warnings

import numpy as np
import pytest

from asymproj.graph import (EdgeListParseError, EdgeSplit, Graph, NegativeSamplingError,
                            build_negative_sets, extend_directed_test_negatives, is_connected,
                            largest_wcc, load_edge_list, load_graph, sample_negative_edges,
                            split_edges, write_edge_list, write_id_map)

from conftest import random_graph


def edge_set(edges):
    return {tuple(map(int, e)) for e in edges}


def write(tmp_path, text, name="g.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


# loading ------------------------------------------------------------------------

def test_load_minimal_directed(tmp_path):
    g = load_edge_list(write(tmp_path, "0 1\n1 2"), directed=True)
    assert g.num_nodes == 3
    assert edge_set(g.edges()) == {(0, 1), (1, 2)}
    assert g.directed


def test_load_undirected_duplicate_collapses(tmp_path):
    g = load_edge_list(write(tmp_path, "# c\n5 7\n7 5"), directed=False)
    assert g.num_nodes == 2
    assert g.num_edges == 1
    assert g.raw_ids == ["5", "7"]


def test_load_gzip_and_weights(tmp_path):
    p = tmp_path / "g.txt.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("a b 2.5\nb c\n")
    g = load_edge_list(p, directed=True)
    assert g.weights(0).tolist() == [2.5]
    assert g.num_edges == 2


def test_self_loops_dropped(tmp_path):
    g = load_edge_list(write(tmp_path, "1 1\n1 2\n"), directed=True)
    assert g.num_edges == 1


@pytest.mark.parametrize("text", ["", "# only a comment\n\n"])
def test_no_edges(tmp_path, text):
    with pytest.raises(ValueError, match="no edges"):
        load_edge_list(write(tmp_path, text), directed=True)


def test_parse_error_has_location(tmp_path):
    p = write(tmp_path, "0 1\n0 1 2 3\n")
    with pytest.raises(EdgeListParseError) as exc:
        load_edge_list(p, directed=True)
    assert exc.value.lineno == 2
    assert str(p) in str(exc.value)


def test_bad_weight(tmp_path):
    with pytest.raises(EdgeListParseError):
        load_edge_list(write(tmp_path, "0 1 x\n"), directed=True)
    with pytest.raises(ValueError, match="negative"):
        load_edge_list(write(tmp_path, "0 1 -1\n"), directed=True)


@pytest.mark.parametrize("directed", [True, False])
def test_edge_list_round_trip(tmp_path, directed):
    g = random_graph(40, 120, directed, seed=3)
    write_edge_list(g, tmp_path / "e.tsv")
    write_id_map(g, tmp_path / "ids.tsv")
    assert load_graph(tmp_path / "e.tsv", tmp_path / "ids.tsv", directed) == g


def test_undirected_adjacency_is_symmetric():
    g = random_graph(30, 60, directed=False, seed=1)
    a = g.out_adj
    assert (a != a.T).nnz == 0
    assert g.num_edges == 60


# components -------------------------------------------------------------------

def test_largest_wcc_picks_four_cycle():
    tri = [[0, 1], [1, 2], [2, 0], [3, 4], [4, 5], [5, 3]]
    cyc = [[6, 7], [7, 8], [8, 9], [9, 6]]
    g = Graph.from_edges(tri + cyc, 10, directed=False, raw_ids=[str(i) for i in range(10)])
    h = largest_wcc(g)
    assert h.num_nodes == 4 and h.num_edges == 4
    assert sorted(h.raw_ids) == ["6", "7", "8", "9"]


def test_largest_wcc_idempotent():
    g = random_graph(50, 80, directed=True, seed=2, connected=False)
    once = largest_wcc(g)
    assert largest_wcc(once) == once


def test_largest_wcc_uses_weak_connectivity():
    g = Graph.from_edges([[0, 1], [2, 1]], 3, directed=True)
    assert largest_wcc(g).num_nodes == 3


# splitting --------------------------------------------------------------------

def test_split_triangle(triangle):
    s = split_edges(triangle, seed=0)
    assert (len(s.train_pos), len(s.test_pos)) == (2, 1)


def test_split_path_degenerate(path3):
    with pytest.warns(RuntimeWarning):
        s = split_edges(path3, seed=0)
    assert len(s.train_pos) == 2 and len(s.test_pos) == 0


@pytest.mark.parametrize("directed", [False, True])
def test_split_1000_edges_connected(directed):
    g = random_graph(300, 1000, directed, seed=7)
    s = split_edges(g, seed=11)
    assert len(s.train_pos) == 500
    assert is_connected(g.num_nodes, s.train_pos)
    assert edge_set(s.train_pos) | edge_set(s.test_pos) == edge_set(g.edges())
    assert not edge_set(s.train_pos) & edge_set(s.test_pos)


def test_split_deterministic():
    g = random_graph(100, 300, True, seed=4)
    a, b = split_edges(g, seed=9), split_edges(g, seed=9)
    assert np.array_equal(a.train_pos, b.train_pos)


def test_split_save_load(tmp_path):
    g = random_graph(60, 150, True, seed=4)
    s = sample_negative_edges(g, split_edges(g, 0), seed=1)
    s.save(tmp_path / "split")
    t = EdgeSplit.load(tmp_path / "split")
    for name in ("train_pos", "test_pos", "train_neg", "test_neg"):
        assert np.array_equal(getattr(s, name), getattr(t, name))


# negatives --------------------------------------------------------------------

def test_k4_has_no_negatives():
    k4 = Graph.from_edges([[i, j] for i in range(4) for j in range(i + 1, 4)], 4, False)
    s = split_edges(k4, seed=0)
    with pytest.raises(NegativeSamplingError):
        sample_negative_edges(k4, s, seed=0)


def test_triangle_train_negatives_short(triangle):
    s = split_edges(triangle, seed=0)
    # only the test edge is absent from the training edges; test negatives are impossible
    s = EdgeSplit(s.train_pos, np.zeros((0, 2)))
    with pytest.raises(NegativeSamplingError):
        sample_negative_edges(triangle, s, seed=0)
    with pytest.warns(RuntimeWarning):
        filled = sample_negative_edges(triangle, s, seed=0, allow_partial=True)
    assert len(filled.train_neg) == 1
    assert edge_set(filled.train_neg) == edge_set(triangle.edges()) - edge_set(s.train_pos)


@pytest.mark.parametrize("directed", [False, True])
def test_negatives_absent_from_edges(directed):
    g = random_graph(1000, 3000, directed, seed=5)
    s = sample_negative_edges(g, split_edges(g, 1), seed=2)
    assert len(s.test_neg) == len(s.test_pos) and len(s.train_neg) == len(s.train_pos)
    all_e, train_e = edge_set(g.edges()), edge_set(s.train_pos)

    def canon(e):
        return e if directed else (min(e), max(e))
    assert all(canon(e) not in all_e for e in edge_set(s.test_neg))
    assert all(canon(e) not in train_e for e in edge_set(s.train_neg))
    assert all(u != v for u, v in s.test_neg)


def test_extend_single_reversal():
    g = Graph.from_edges([[0, 1], [2, 1], [2, 3]], 4, directed=True)
    s = EdgeSplit(np.zeros((0, 2)), np.zeros((0, 2)))
    out = extend_directed_test_negatives(g, s)
    assert edge_set(out.test_neg) == {(1, 0), (1, 2), (3, 2)}


def test_extend_reciprocal_excluded():
    g = Graph.from_edges([[0, 1], [1, 0]], 2, directed=True)
    out = extend_directed_test_negatives(g, EdgeSplit(np.zeros((0, 2)), np.zeros((0, 2))))
    assert len(out.test_neg) == 0


def test_extend_count_matches_one_way_edges():
    g = random_graph(200, 900, True, seed=8)
    s = sample_negative_edges(g, split_edges(g, 0), seed=0)
    out = extend_directed_test_negatives(g, s)
    e = edge_set(g.edges())
    one_way = sum((v, u) not in e for u, v in e)
    overlap = len(edge_set(s.test_neg) & {(v, u) for u, v in e if (v, u) not in e})
    assert len(out.test_neg) == len(s.test_neg) + one_way - overlap


def test_extend_rejects_undirected(triangle):
    with pytest.raises(ValueError):
        extend_directed_test_negatives(triangle, EdgeSplit(np.zeros((0, 2)), np.zeros((0, 2))))


def test_negative_sets_star_center_saturated():
    star = Graph.from_edges([[0, i] for i in range(1, 5)], 5, directed=False)
    with pytest.warns(RuntimeWarning):
        ns = build_negative_sets(star, star.edges(), per_node=5, seed=0)
    assert len(ns[0]) == 0


def test_negative_sets_path(path3):
    ns = build_negative_sets(path3, path3.edges(), per_node=1, seed=0)
    assert ns[0].tolist() == [2]


@pytest.mark.parametrize("directed", [False, True])
def test_negative_sets_membership(directed):
    g = random_graph(150, 600, directed, seed=6)
    s = split_edges(g, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ns = build_negative_sets(g, s.train_pos, per_node=20, seed=3)
    train = g.with_edges(s.train_pos)
    for u in range(g.num_nodes):
        negs = ns[u]
        assert len(set(negs.tolist())) == len(negs) == 20
        assert u not in negs
        assert not any(train.has_edge(u, int(v)) for v in negs)
