"""scikit-learn style wrappers around the walk / train / score pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import build_negative_sets
from .metrics import BASELINE_SCORERS, roc_auc
from .model import (EdgeModelKind, ModelDims, export_edge_representations, init_params,
                    score_pairs, sigmoid)
from .training import TrainConfig, train
from .validation import check_graph, check_labels, check_pairs
from .walks import WalkConfig, count_cooccurrences


class AsymProjEmbedding(BaseEstimator):
    """Learn node embeddings and an edge scorer from random-walk co-occurrences.

    ``fit`` takes a training graph (a :class:`Graph` or an ``(E, 2)`` edge
    array). Pair-level methods take ``(n, 2)`` arrays of node ids.

    Parameters
    ----------
    model : str
        One of ``shallow_sym``, ``shallow_asym``, ``deep_sym``, ``deep_asym``.
    dim : int
        Embedding width D.
    hidden_dim, manifold_dim, bottleneck : int
        Widths d1, d and b; 0 picks the defaults (2D, D, d).
    n_projections : int
        Number of low-rank projections h (asymmetric models only).
    left_window, right_window : int or None
        Context window; None picks (0, 2) for directed graphs and (2, 2) otherwise.
    neg_per_node : int
        Size of each node's pre-sampled pool of non-neighbors.
    """

    def __init__(self, model="deep_asym", dim=8, hidden_dim=0, manifold_dim=0, bottleneck=0,
                 n_projections=1, directed=True, walks_per_node=80, walk_length=100, p=1.0,
                 q=1.0, left_window=None, right_window=None, learning_rate=0.001, l2=1e-4,
                 negatives=5, batch_size=512, epochs=50, pairs_per_epoch=None,
                 neg_per_node=100, optimizer="percentdelta", circular=False,
                 dtype="float32", random_state=0):
        self.model = model
        self.dim = dim
        self.hidden_dim = hidden_dim
        self.manifold_dim = manifold_dim
        self.bottleneck = bottleneck
        self.n_projections = n_projections
        self.directed = directed
        self.walks_per_node = walks_per_node
        self.walk_length = walk_length
        self.p = p
        self.q = q
        self.left_window = left_window
        self.right_window = right_window
        self.learning_rate = learning_rate
        self.l2 = l2
        self.negatives = negatives
        self.batch_size = batch_size
        self.epochs = epochs
        self.pairs_per_epoch = pairs_per_epoch
        self.neg_per_node = neg_per_node
        self.optimizer = optimizer
        self.circular = circular
        self.dtype = dtype
        self.random_state = random_state

    def walk_config(self, graph):
        kw = dict(walks_per_node=self.walks_per_node, walk_length=self.walk_length,
                  p=self.p, q=self.q, seed=self.random_state)
        if self.left_window is not None:
            kw["left_window"] = self.left_window
        if self.right_window is not None:
            kw["right_window"] = self.right_window
        return WalkConfig.for_graph(graph, **kw)

    def train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, l2=self.l2,
                           negatives=self.negatives, batch_size=self.batch_size,
                           epochs=self.epochs, seed=self.random_state, circular=self.circular,
                           optimizer=self.optimizer, pairs_per_epoch=self.pairs_per_epoch)

    def fit(self, X, y=None, split=None, counts=None):
        """Fit on the training graph ``X``.

        ``split`` (an EdgeSplit with train positives and negatives) enables
        model selection by training AUC. Precomputed ``counts`` skip the walks.
        """
        graph = check_graph(X, self.directed)
        kind = EdgeModelKind.parse(self.model)
        if self.neg_per_node < self.negatives:
            raise ValueError("neg_per_node must be >= negatives")
        cfg = self.train_config()
        if counts is None:
            counts = count_cooccurrences(graph, self.walk_config(graph))
        neg_sets = build_negative_sets(graph, graph.edges(), self.neg_per_node,
                                       seed=self.random_state)
        dims = ModelDims(graph.num_nodes, self.dim, self.hidden_dim, self.manifold_dim,
                         self.bottleneck, self.n_projections)
        model = init_params(dims, kind, seed=self.random_state, circular=self.circular,
                            dtype=np.dtype(self.dtype))
        result = train(counts, neg_sets, model, cfg, split=split)
        self.graph_ = graph
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.diverged_ = result.diverged
        self.n_nodes_ = graph.num_nodes
        return self

    def decision_function(self, pairs):
        check_is_fitted(self, "model_")
        pairs = check_pairs(pairs, self.n_nodes_)
        return np.asarray(score_pairs(self.model_, pairs), dtype=np.float64)

    def predict_proba(self, pairs):
        s = sigmoid(self.decision_function(pairs))
        return np.column_stack([1 - s, s])

    def predict(self, pairs):
        return (self.decision_function(pairs) > 0).astype(np.int64)

    def score(self, pairs, y):
        """ROC-AUC of the edge scores against 0/1 labels."""
        s = self.decision_function(pairs)
        return roc_auc(s, check_labels(y, len(s)))

    def transform(self, X=None):
        """Per-node edge representations, flattened to ``[left | right]`` rows.

        ``X`` selects node ids; None returns every node.
        """
        check_is_fitted(self, "model_")
        reps = export_edge_representations(self.model_)
        n = len(reps.left)
        if reps.symmetric:
            out = reps.phi
        else:
            out = np.concatenate([reps.left.reshape(n, -1), reps.right.reshape(n, -1)], axis=1)
        if X is None:
            return out
        nodes = np.asarray(X, dtype=np.int64).ravel()
        if len(nodes) and (nodes.min() < 0 or nodes.max() >= n):
            raise ValueError(f"node ids outside [0, {n})")
        return out[nodes]

    def edge_representations(self):
        check_is_fitted(self, "model_")
        return export_edge_representations(self.model_)


class NeighborhoodScorer(BaseEstimator):
    """Jaccard, common-neighbor or Adamic-Adar scores over a training graph."""

    def __init__(self, method="aa", directed=True):
        self.method = method
        self.directed = directed

    def fit(self, X, y=None):
        if self.method not in BASELINE_SCORERS:
            raise ValueError(f"unknown baseline {self.method!r}; "
                             f"expected one of {sorted(BASELINE_SCORERS)}")
        self.graph_ = check_graph(X, self.directed)
        return self

    def decision_function(self, pairs):
        check_is_fitted(self, "graph_")
        pairs = check_pairs(pairs, self.graph_.num_nodes)
        return np.asarray(BASELINE_SCORERS[self.method](self.graph_, pairs), dtype=np.float64)

    def score(self, pairs, y):
        s = self.decision_function(pairs)
        return roc_auc(s, check_labels(y, len(s)))
