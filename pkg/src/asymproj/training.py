"""Graph-likelihood objectives, optimizers and the minibatch training loop."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import NegativeSets
from .metrics import roc_auc
from .model import EdgeModel, batch_objective, log_sigmoid, score_pairs

logger = logging.getLogger(__name__)

PD_EPS = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    l2: float = 0.0001
    negatives: int = 5
    batch_size: int = 512
    epochs: int = 50
    seed: int = 0
    circular: bool = False
    optimizer: str = "percentdelta"
    pairs_per_epoch: int | None = None
    anchor_only: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.optimizer not in ("percentdelta", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LossStats:
    epoch: int
    mean_objective: float
    train_auc: float = float("nan")


@dataclass
class TrainResult:
    model: EdgeModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False


def write_stats_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_objective", "train_auc"])
        for s in history:
            w.writerow([s.epoch, repr(s.mean_objective), repr(s.train_auc)])


def read_stats_csv(path):
    with open(path) as fh:
        return [LossStats(int(r["epoch"]), float(r["mean_objective"]), float(r["train_auc"]))
                for r in csv.DictReader(fh)]


# objectives -------------------------------------------------------------------

def graph_log_likelihood(counts, scores, train_pos, directed, include_self=False, anchors=None):
    """Log graph likelihood (up to its normalizer) for a dense score matrix.

    ``sum_{u,v} D_uv log s(g(u,v)) + 1[(u,v) not in E_train] log(1 - s(g(u,v)))``.
    Quadratic in the number of nodes; meant as a reference on small graphs.

    Parameters
    ----------
    counts : CooccurrenceCounts or dict mapping (u, v) to D_uv.
    scores : (N, N) array with ``scores[u, v] = g(u, v)``.
    train_pos : (m, 2) training edges; undirected edges count in both orientations.
    include_self : whether diagonal pairs (u, u) enter the non-edge term.
    anchors : optional subset of rows u to sum over.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    D = np.zeros((n, n))
    items = counts.as_dict().items() if hasattr(counts, "as_dict") else counts.items()
    for (u, v), c in items:
        D[u, v] += c
    edge = np.zeros((n, n), dtype=bool)
    tp = np.asarray(train_pos, dtype=np.int64).reshape(-1, 2)
    edge[tp[:, 0], tp[:, 1]] = True
    if not directed:
        edge[tp[:, 1], tp[:, 0]] = True
    nonedge = ~edge
    if not include_self:
        np.fill_diagonal(nonedge, False)
    terms = D * log_sigmoid(scores) + nonedge * log_sigmoid(-scores)
    if anchors is not None:
        terms = terms[np.asarray(anchors)]
    return float(terms.sum())


def nce_objective(pos_scores, neg_scores, neg_mask=None, neg_weight=None):
    """Batch mean of ``log s(g(u,v)) + sum_k log(1 - s(g(u,v_k)))``.

    ``neg_scores`` has shape (B, K); ``neg_mask`` drops padded negatives and
    ``neg_weight`` (B,) rescales each pair's negative sum.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(len(pos), -1)
    mask = np.ones_like(neg) if neg_mask is None else np.asarray(neg_mask, dtype=np.float64)
    neg_term = (mask * log_sigmoid(-neg)).sum(axis=1)
    if neg_weight is not None:
        neg_term = neg_term * np.asarray(neg_weight, dtype=np.float64)
    return float((log_sigmoid(pos) + neg_term).mean())


# optimizers -----------------------------------------------------------------

def percent_delta_step(theta, grad, lr, eps=PD_EPS):
    """One PercentDelta update, scaled so the mean |relative change| equals ``lr``.

    ``delta = -lr * grad / mean(|grad| / max(|theta|, eps))``. An all-zero
    gradient leaves ``theta`` unchanged.
    """
    theta = np.asarray(theta)
    grad = np.asarray(grad)
    ratio = np.abs(grad.astype(np.float64)) / np.maximum(np.abs(theta.astype(np.float64)), eps)
    denom = ratio.mean() if ratio.size else 0.0
    if denom == 0.0 or not np.isfinite(denom):
        return theta.copy()
    return (theta - (lr / denom) * grad).astype(theta.dtype)


class PercentDelta:
    def __init__(self, lr, eps=PD_EPS):
        self.lr = lr
        self.eps = eps

    def update(self, name, theta, grad, rows=None):
        return percent_delta_step(theta, grad, self.lr, self.eps)


class Adam:
    """Adam with lazy row-wise moments for the embedding table."""

    def __init__(self, lr, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros(s) for n, s in shapes.items()}
        self.v = {n: np.zeros(s) for n, s in shapes.items()}
        self.t = {n: np.zeros(s[0] if n == "Y" else (), dtype=np.int64)
                  for n, s in shapes.items()}

    def update(self, name, theta, grad, rows=None):
        m, v, t = self.m[name], self.v[name], self.t[name]
        idx = rows if rows is not None else ...
        t[idx] += 1
        m[idx] = self.beta1 * m[idx] + (1 - self.beta1) * grad
        v[idx] = self.beta2 * v[idx] + (1 - self.beta2) * grad * grad
        steps = t[idx][:, None] if rows is not None else t
        m_hat = m[idx] / (1 - self.beta1 ** steps)
        v_hat = v[idx] / (1 - self.beta2 ** steps)
        return (theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(theta.dtype)


def make_optimizer(cfg, model):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate,
                    {n: model.params[n].shape for n in model.trainable_names()})
    return PercentDelta(cfg.learning_rate)


def apply_gradients(model, grads, optimizer, l2, batch_size, anchor_only=True):
    """Apply one update. Embedding rows are updated as a gathered slice.

    With ``anchor_only`` the slice holds only anchor rows, so context and
    negative rows keep their values. The L2 term adds ``2 * l2 * theta``.
    """
    rows, nodes = grads["Y_rows"], grads["Y_nodes"]
    if anchor_only:
        rows, nodes = rows[:batch_size], nodes[:batch_size]
    uniq, inv = np.unique(nodes, return_inverse=True)
    g_rows = np.zeros((len(uniq), rows.shape[1]), dtype=np.float64)
    np.add.at(g_rows, inv, rows)
    Y = model.params["Y"]
    y_rows = Y[uniq]
    g_rows += 2 * l2 * y_rows
    Y[uniq] = optimizer.update("Y", y_rows, g_rows, rows=uniq)
    for name in model.trainable_names():
        if name == "Y":
            continue
        g = grads[name] + 2 * l2 * model.params[name]
        model.params[name] = optimizer.update(name, model.params[name], g)


def padded_negative_table(neg_sets, num_nodes, min_width):
    sizes = neg_sets.sizes()
    width = max(int(sizes.max()) if len(sizes) else 0, min_width)
    table = np.full((num_nodes, width), -1, dtype=np.int64)
    for u in range(num_nodes):
        s = neg_sets[u]
        table[u, :len(s)] = s
    return table


def draw_negatives(table, anchors, k, rng):
    """K uniform draws without replacement from each anchor's negative set.

    Returns (negatives, mask); short sets are padded with node 0 and mask 0.
    """
    cand = table[anchors]
    keys = rng.random(cand.shape)
    keys[cand < 0] = np.inf
    order = np.argsort(keys, axis=1)[:, :k]
    negs = np.take_along_axis(cand, order, axis=1)
    mask = negs >= 0
    return np.where(mask, negs, 0), mask.astype(np.float64)


def epoch_pairs(counts, cfg, rng):
    """Indices into ``counts`` for one epoch: (u, v) repeated D_uv times, shuffled.

    With ``pairs_per_epoch`` set, that many pairs are drawn i.i.d. from D/Z instead.
    """
    if cfg.pairs_per_epoch is None:
        idx = np.repeat(np.arange(len(counts), dtype=np.int64), counts.counts)
        rng.shuffle(idx)
        return idx
    p = counts.counts / counts.total
    return rng.choice(len(counts), size=cfg.pairs_per_epoch, p=p)


def train(counts, neg_sets, model, cfg, split=None, callback=None):
    """Maximize the negative-sampled graph likelihood.

    Parameters
    ----------
    counts : CooccurrenceCounts built from training walks.
    neg_sets : NegativeSets built from the training edges.
    model : EdgeModel, updated in place; the returned model is the snapshot
        with the best training-split AUC (or the last epoch without a split).
    split : optional EdgeSplit whose ``train_pos``/``train_neg`` drive model selection.
    callback : optional ``f(epoch_stats, model)`` called after every epoch.
    """
    if not isinstance(neg_sets, NegativeSets):
        raise TypeError("neg_sets must be NegativeSets")
    if len(counts) == 0:
        raise ValueError("no co-occurrence pairs to train on")
    model.circular = cfg.circular
    rng = np.random.default_rng(cfg.seed)
    n = model.dims.num_nodes
    table = padded_negative_table(neg_sets, n, cfg.negatives)
    short = np.flatnonzero(neg_sets.sizes() < cfg.negatives)
    if len(short):
        warnings.warn(f"{len(short)} node(s) have fewer than K={cfg.negatives} negatives; "
                      "all of their negatives are used", RuntimeWarning, stacklevel=2)
    optimizer = make_optimizer(cfg, model)
    select = split is not None and len(split.train_pos) and len(split.train_neg)
    if select:
        sel_pairs = np.concatenate([split.train_pos, split.train_neg])
        sel_labels = np.r_[np.ones(len(split.train_pos)), np.zeros(len(split.train_neg))]

    result = TrainResult(model=model.copy())
    best_auc = -np.inf
    last_good = model.copy()
    for epoch in range(1, cfg.epochs + 1):
        idx = epoch_pairs(counts, cfg, rng)
        total, seen = 0.0, 0
        diverged = False
        for start in range(0, len(idx), cfg.batch_size):
            b = idx[start:start + cfg.batch_size]
            if len(b) < 2 and model.kind.deep:
                continue
            anchors, contexts = counts.src[b], counts.dst[b]
            negs, mask = draw_negatives(table, anchors, cfg.negatives, rng)
            obj, grads = batch_objective(model, anchors, contexts, negs, mask, mode="train")
            if not math.isfinite(obj):
                diverged = True
                break
            apply_gradients(model, grads, optimizer, cfg.l2, len(b), cfg.anchor_only)
            total += obj * len(b)
            seen += len(b)
        bad_params = any(not np.all(np.isfinite(v)) for v in model.params.values())
        if diverged or bad_params:
            logger.error("objective diverged in epoch %d; keeping last good checkpoint", epoch)
            result.diverged = True
            if result.best_epoch == 0:
                result.model = last_good
            break
        stats = LossStats(epoch, total / max(seen, 1))
        if select:
            stats.train_auc = roc_auc(score_pairs(model, sel_pairs), sel_labels)
        result.history.append(stats)
        logger.info("epoch %d objective %.5f train_auc %.4f", epoch, stats.mean_objective,
                    stats.train_auc)
        last_good = model.copy()
        metric = stats.train_auc if select else epoch
        if metric > best_auc:
            best_auc = metric
            result.best_epoch = epoch
            result.model = last_good
        if callback is not None:
            callback(stats, model)
    return result
