import json
import math

import numpy as np
import pytest

from asymproj.graph import EdgeSplit, Graph
from asymproj.metrics import (adamic_adar, common_neighbors, common_neighbors_scores,
                              embedding_norm_stats, error_reduction, evaluate_link_prediction,
                              generalization_ratio, jaccard, metrics_report,
                              norm_std_percentiles, read_scored_edges, roc_auc, write_metrics,
                              write_scored_edges)

from conftest import random_graph


def neighborhood_graph():
    # N(u)={a,b,c}, N(v)={b,c,d}; ids u=0, v=1, a=2, b=3, c=4, d=5
    return Graph.from_edges([[0, 2], [0, 3], [0, 4], [1, 3], [1, 4], [1, 5]], 6, directed=True)


def test_jaccard_examples():
    g = neighborhood_graph()
    assert jaccard(g, 0, 1) == 0.5
    disjoint = Graph.from_edges([[0, 1], [2, 3]], 4, directed=False)
    assert jaccard(disjoint, 0, 2) == 0.0
    isolated = Graph.from_edges([[0, 1]], 4, directed=False)
    assert jaccard(isolated, 2, 3) == 0.0


def test_common_neighbors_examples():
    assert common_neighbors(neighborhood_graph(), 0, 1) == 2
    edges = [[u, x] for u in (0, 1) for x in range(2, 9)]
    assert common_neighbors(Graph.from_edges(edges, 9, directed=True), 0, 1) == 7


def test_common_neighbors_brute_force():
    g = random_graph(60, 300, directed=False, seed=2)
    pairs = np.random.default_rng(0).integers(0, 60, size=(200, 2))
    got = common_neighbors_scores(g, pairs)
    for (u, v), c in zip(pairs, got):
        a, b = g.neighbors(u).tolist(), g.neighbors(v).tolist()
        i = j = n = 0
        while i < len(a) and j < len(b):
            if a[i] == b[j]:
                n, i, j = n + 1, i + 1, j + 1
            elif a[i] < b[j]:
                i += 1
            else:
                j += 1
        assert c == n


def test_adamic_adar_examples():
    # u=0, v=1 share b=2 (degree 2) and c=3 (degree 4)
    edges = [[0, 2], [1, 2], [0, 3], [1, 3], [3, 4], [3, 5]]
    g = Graph.from_edges(edges, 6, directed=False)
    assert math.isclose(adamic_adar(g, 0, 1), 1 / math.log(2) + 1 / math.log(4))
    assert round(adamic_adar(g, 0, 1), 4) == 2.1640
    assert adamic_adar(g, 4, 2) == 0.0


def test_adamic_adar_skips_degree_one():
    # directed: both 0 and 1 point at 2, whose out-degree is 1
    g = Graph.from_edges([[0, 2], [1, 2], [2, 3]], 4, directed=True)
    assert common_neighbors(g, 0, 1) == 1
    assert adamic_adar(g, 0, 1) == 0.0


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.4] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert roc_auc([0.8, 0.3, 0.5, 0.1], [1, 1, 0, 0]) == 0.75


def test_auc_single_class():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_definition():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 5, 60).astype(float)
    y = rng.integers(0, 2, 60)
    pos, neg = s[y == 1], s[y == 0]
    pairwise = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
    assert math.isclose(roc_auc(s, y), pairwise)


def test_evaluate_oracle_and_constant():
    g = random_graph(30, 80, False, seed=0)
    e = g.edges()
    split = EdgeSplit(e[:40], e[40:], train_neg=[[0, 0]] * 3, test_neg=[[1, 1]] * 5)
    oracle = lambda p: g.has_edges(p[:, 0], p[:, 1]).astype(float)  # noqa: E731
    test_auc, _ = evaluate_link_prediction(oracle, split)
    assert test_auc == 1.0
    assert evaluate_link_prediction(lambda p: np.zeros(len(p)), split) == (0.5, 0.5)


def test_ratio_examples():
    assert generalization_ratio(0.9, 0.9) == 1.0
    assert math.isclose(generalization_ratio(0.948 * 0.91, 0.91), 0.948)
    assert generalization_ratio(0.4, 0.8) == 0.5
    with pytest.raises(ValueError):
        generalization_ratio(0.5, 0.0)


def test_norm_stats_examples():
    assert embedding_norm_stats(np.ones((5, 3))) == 0.0
    assert math.isclose(embedding_norm_stats([[1.0], [3.0]]), 1.0)
    assert math.isclose(embedding_norm_stats([[2.0], [2.0], [2.0], [6.0]]), math.sqrt(3))
    with pytest.raises(ValueError):
        embedding_norm_stats([[1.0]])


def test_norm_percentiles():
    assert norm_std_percentiles([1, 2, 3, 4, 5]) == (2.0, 3.0, 4.0)


def test_error_reduction():
    assert math.isclose(error_reduction(0.871, 0.603), (0.397 - 0.129) / 0.397)


def test_scored_edges_round_trip(tmp_path):
    pairs = np.array([[0, 1], [2, 3]])
    write_scored_edges(tmp_path / "s.tsv", pairs, [0.5, -1.25], [1, 0])
    p, s, y = read_scored_edges(tmp_path / "s.tsv")
    assert np.array_equal(p, pairs) and s.tolist() == [0.5, -1.25] and y.tolist() == [True, False]


def test_metrics_report(tmp_path):
    report = metrics_report("deep_asym", 8, 0.8, 0.9)
    write_metrics(tmp_path / "m.json", report)
    back = json.loads((tmp_path / "m.json").read_text())
    assert set(back) == {"model", "dims", "test_auc", "train_auc", "ratio"}
    assert math.isclose(back["ratio"], 0.8 / 0.9)
