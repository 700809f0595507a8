"""Link-prediction metrics, neighborhood baselines and diagnostics."""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata

BASELINES = ("jaccard", "cn", "aa")


def _binary(graph):
    a = graph.out_adj.copy()
    a.data = np.ones_like(a.data)
    return a.tocsr()


def _intersections(adj, pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    inter = np.asarray(adj[pairs[:, 0]].multiply(adj[pairs[:, 1]]).sum(axis=1)).ravel()
    return pairs, inter


def common_neighbors_scores(graph, pairs):
    """|N(u) & N(v)| for each pair; N is out-neighbors in the training graph."""
    _, inter = _intersections(_binary(graph), pairs)
    return inter


def jaccard_scores(graph, pairs):
    adj = _binary(graph)
    pairs, inter = _intersections(adj, pairs)
    deg = np.diff(adj.indptr)
    union = deg[pairs[:, 0]] + deg[pairs[:, 1]] - inter
    out = np.zeros(len(pairs))
    np.divide(inter, union, out=out, where=union > 0)
    return out


def adamic_adar_scores(graph, pairs):
    """Sum of 1/ln|N(x)| over common neighbors x; neighbors with |N(x)| <= 1 are skipped."""
    adj = _binary(graph)
    deg = np.diff(adj.indptr).astype(np.float64)
    weight = np.zeros_like(deg)
    np.divide(1.0, np.log(deg, where=deg > 1, out=np.ones_like(deg)), out=weight, where=deg > 1)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    weighted = adj @ sp.diags(weight)
    return np.asarray(weighted[pairs[:, 0]].multiply(adj[pairs[:, 1]]).sum(axis=1)).ravel()


def jaccard(graph, u, v):
    return float(jaccard_scores(graph, [[u, v]])[0])


def common_neighbors(graph, u, v):
    return float(common_neighbors_scores(graph, [[u, v]])[0])


def adamic_adar(graph, u, v):
    return float(adamic_adar_scores(graph, [[u, v]])[0])


BASELINE_SCORERS = {"jaccard": jaccard_scores, "cn": common_neighbors_scores,
                    "aa": adamic_adar_scores}


def roc_auc(scores, labels):
    """Rank-based ROC-AUC with midranks for ties.

    ``(sum of positive ranks - P(P+1)/2) / (P N)``: the probability that a
    random positive outscores a random negative, ties counting one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def score_split(scorer, pos, neg):
    pos = np.asarray(pos).reshape(-1, 2)
    neg = np.asarray(neg).reshape(-1, 2)
    pairs = np.concatenate([pos, neg])
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    return pairs, np.asarray(scorer(pairs), dtype=np.float64), labels


def evaluate_link_prediction(scorer, split):
    """(test_auc, train_auc) of ``scorer(pairs) -> scores`` on a filled split."""
    _, s_test, y_test = score_split(scorer, split.test_pos, split.test_neg)
    _, s_train, y_train = score_split(scorer, split.train_pos, split.train_neg)
    return roc_auc(s_test, y_test), roc_auc(s_train, y_train)


def generalization_ratio(test_auc, train_auc):
    if train_auc <= 0:
        raise ValueError("train AUC must be positive")
    return test_auc / train_auc


def embedding_norm_stats(vectors):
    """Population standard deviation of per-node L2 norms."""
    vectors = np.asarray(vectors, dtype=np.float64)
    vectors = vectors.reshape(len(vectors), -1)
    if len(vectors) < 2:
        raise ValueError("need at least two nodes")
    return float(np.linalg.norm(vectors, axis=1).std())


def norm_std_percentiles(stds, q=(25, 50, 75)):
    return tuple(float(x) for x in np.percentile(np.asarray(stds, dtype=np.float64), q))


def error_reduction(ours_auc, baseline_auc):
    """Relative reduction of (1 - AUC) against a baseline."""
    base_err = 1.0 - baseline_auc
    return (base_err - (1.0 - ours_auc)) / base_err


def write_scored_edges(path, pairs, scores, labels):
    with open(path, "w") as fh:
        for (u, v), s, y in zip(pairs, scores, labels):
            fh.write(f"{u}\t{v}\t{s:.9g}\t{'pos' if y else 'neg'}\n")


def read_scored_edges(path):
    pairs, scores, labels = [], [], []
    with open(path) as fh:
        for line in fh:
            u, v, s, y = line.rstrip("\n").split("\t")
            pairs.append((int(u), int(v)))
            scores.append(float(s))
            labels.append(y == "pos")
    return np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(scores), np.array(labels)


def metrics_report(model, dims, test_auc, train_auc):
    return {"model": model, "dims": dims, "test_auc": test_auc, "train_auc": train_auc,
            "ratio": generalization_ratio(test_auc, train_auc)}


def write_metrics(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
