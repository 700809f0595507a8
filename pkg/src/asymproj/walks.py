"""Random-walk simulation and co-occurrence counting.

All walkers of one round (one walk per start node) advance together as numpy
arrays. First-order steps draw from per-node alias tables; second-order
(p, q) steps propose from the first-order table and accept with probability
``bias / max_bias``, which samples exactly from the biased distribution
without materializing per-(prev, curr) tables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PAD = -1


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 80
    walk_length: int = 100
    p: float = 1.0
    q: float = 1.0
    left_window: int = 2
    right_window: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")
        if self.left_window < 0 or self.right_window < 0:
            raise ValueError("window offsets must be non-negative")
        if self.left_window + self.right_window < 1:
            raise ValueError("context window is empty")

    @classmethod
    def for_graph(cls, graph, **kw):
        """Default windows by directedness: (0, 2) directed, (2, 2) undirected."""
        kw.setdefault("left_window", 0 if graph.directed else 2)
        kw.setdefault("right_window", 2)
        return cls(**kw)


def build_alias_table(probs):
    """Vose alias table for one discrete distribution: returns (accept, alias)."""
    probs = np.asarray(probs, dtype=np.float64)
    n = len(probs)
    scaled = probs * n / probs.sum()
    accept = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, g = small.pop(), large.pop()
        accept[s] = scaled[s]
        alias[s] = g
        scaled[g] -= 1.0 - scaled[s]
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are numerically 1
    return accept, alias


class TransitionTable:
    """First-order transition probabilities aligned with the graph's CSR arrays.

    ``probs[indptr[u]:indptr[u+1]]`` is pi(u -> .) over u's sorted out-neighbors;
    sink rows are empty. Alias entries store neighbor offsets local to the row.
    """

    def __init__(self, graph):
        adj = graph.out_adj
        self.graph = graph
        self.indptr = np.asarray(adj.indptr, dtype=np.int64)
        self.indices = np.asarray(adj.indices, dtype=np.int64)
        self.degree = np.diff(self.indptr)
        data = np.asarray(adj.data, dtype=np.float64)
        rows = np.repeat(np.arange(graph.num_nodes), self.degree)
        row_sum = np.bincount(rows, weights=data, minlength=graph.num_nodes)
        self.probs = data / row_sum[rows] if len(data) else data
        self.accept = np.ones(len(data))
        self.alias = np.zeros(len(data), dtype=np.int64)
        for u in range(graph.num_nodes):
            a, b = self.indptr[u], self.indptr[u + 1]
            self.alias[a:b] = np.arange(b - a)
            row = data[a:b]
            if b - a > 1 and not np.all(row == row[0]):
                self.accept[a:b], self.alias[a:b] = build_alias_table(self.probs[a:b])

    def row(self, u):
        a, b = self.indptr[u], self.indptr[u + 1]
        return self.indices[a:b], self.probs[a:b]

    def is_sink(self, u):
        return self.degree[u] == 0

    def draw(self, curr, rng):
        """One first-order step for every walker in ``curr`` (no sinks allowed)."""
        deg = self.degree[curr]
        k = np.minimum((rng.random(len(curr)) * deg).astype(np.int64), deg - 1)
        pos = self.indptr[curr] + k
        take = rng.random(len(curr)) < self.accept[pos]
        local = np.where(take, k, self.alias[pos])
        return self.indices[self.indptr[curr] + local]


def make_transition_pr(graph):
    return TransitionTable(graph)


def second_order_weights(graph, prev, curr, p, q):
    """Unnormalized biased weights over ``curr``'s out-neighbors given ``prev``."""
    nbrs = graph.neighbors(curr)
    w = graph.weights(curr).astype(np.float64)
    bias = np.where(nbrs == prev, 1.0 / p,
                    np.where(graph.has_edges(np.full(len(nbrs), prev), nbrs), 1.0, 1.0 / q))
    return nbrs, w * bias


def _second_order_step(table, prev, curr, p, q, rng):
    graph = table.graph
    out = np.empty(len(curr), dtype=np.int64)
    todo = np.arange(len(curr))
    max_bias = max(1.0 / p, 1.0, 1.0 / q)
    while len(todo):
        cand = table.draw(curr[todo], rng)
        t = prev[todo]
        bias = np.where(cand == t, 1.0 / p,
                        np.where(graph.has_edges(t, cand), 1.0, 1.0 / q))
        ok = rng.random(len(todo)) * max_bias < bias
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return out


def _walk_round(table, starts, cfg, rng):
    n_walkers = len(starts)
    walks = np.full((n_walkers, cfg.walk_length + 1), PAD, dtype=np.int64)
    walks[:, 0] = starts
    alive = np.flatnonzero(table.degree[starts] > 0)
    first_order = cfg.p == 1.0 and cfg.q == 1.0
    for j in range(1, cfg.walk_length + 1):
        if not len(alive):
            break
        curr = walks[alive, j - 1]
        if j == 1 or first_order:
            nxt = table.draw(curr, rng)
        else:
            nxt = _second_order_step(table, walks[alive, j - 2], curr, cfg.p, cfg.q, rng)
        walks[alive, j] = nxt
        # truncate at sinks
        alive = alive[table.degree[nxt] > 0]
    return walks


def iter_walk_rounds(graph, cfg, table=None):
    """Yield ``walks_per_node`` padded walk arrays, one row per start node.

    Round ``i`` uses its own generator seeded from ``(seed, i)``, so any round
    can be reproduced independently of the others.
    """
    table = table or make_transition_pr(graph)
    starts = np.arange(graph.num_nodes, dtype=np.int64)
    for i in range(cfg.walks_per_node):
        rng = np.random.default_rng([cfg.seed, i])
        yield _walk_round(table, starts, cfg, rng)


class WalkCorpus:
    """Walks stored as a padded (num_walks, walk_length + 1) array, ``-1`` after truncation."""

    def __init__(self, walks):
        self.walks = np.asarray(walks, dtype=np.int64)

    def __len__(self):
        return len(self.walks)

    def __iter__(self):
        for row in self.walks:
            yield row[row != PAD]

    def lengths(self):
        return (self.walks != PAD).sum(axis=1)

    def save(self, path):
        with open(path, "w") as fh:
            for walk in self:
                fh.write(" ".join(map(str, walk)) + "\n")

    @classmethod
    def load(cls, path):
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rows.append([int(x) for x in line.split()])
        width = max(len(r) for r in rows)
        arr = np.full((len(rows), width), PAD, dtype=np.int64)
        for i, r in enumerate(rows):
            arr[i, :len(r)] = r
        return cls(arr)


def sample_walks(graph, cfg):
    rounds = list(iter_walk_rounds(graph, cfg))
    # order walks by start node, then walk index, as in the nested loop over V and n
    stacked = np.stack(rounds, axis=1).reshape(-1, cfg.walk_length + 1)
    return WalkCorpus(stacked)


class CooccurrenceCounts:
    """Sparse ordered-pair counts D_uv with a cached total.

    Pairs are kept sorted by (u, v); ``counts`` are strictly positive.
    """

    def __init__(self, src, dst, counts, num_nodes):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if len(counts) and counts.min() <= 0:
            raise ValueError("counts must be strictly positive")
        order = np.lexsort((dst, src))
        self.src, self.dst, self.counts = src[order], dst[order], counts[order]
        self.num_nodes = int(num_nodes)
        self.total = int(self.counts.sum())

    @classmethod
    def from_keys(cls, keys, counts, num_nodes):
        keys = np.asarray(keys, dtype=np.int64)
        return cls(keys // num_nodes, keys % num_nodes, counts, num_nodes)

    def __len__(self):
        return len(self.counts)

    def as_dict(self):
        return {(int(u), int(v)): int(c) for u, v, c in zip(self.src, self.dst, self.counts)}

    def get(self, u, v):
        i = np.searchsorted(self.src * self.num_nodes + self.dst, u * self.num_nodes + v)
        if i < len(self) and self.src[i] == u and self.dst[i] == v:
            return int(self.counts[i])
        return 0

    def __eq__(self, other):
        if not isinstance(other, CooccurrenceCounts):
            return NotImplemented
        return (np.array_equal(self.src, other.src) and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.counts, other.counts))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"# num_nodes={self.num_nodes}\n")
            for u, v, c in zip(self.src, self.dst, self.counts):
                fh.write(f"{u}\t{v}\t{c}\n")

    @classmethod
    def load(cls, path):
        num_nodes = None
        src, dst, cnt = [], [], []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    if "num_nodes=" in line:
                        num_nodes = int(line.split("num_nodes=")[1])
                    continue
                u, v, c = line.split("\t")
                src.append(int(u))
                dst.append(int(v))
                cnt.append(int(c))
        if num_nodes is None:
            num_nodes = max(max(src), max(dst)) + 1
        return cls(src, dst, cnt, num_nodes)


def _pair_keys(walks, left, right, num_nodes):
    keys = []
    width = walks.shape[1]
    for off in range(-left, right + 1):
        if off == 0 or abs(off) >= width:
            continue
        if off > 0:
            a, b = walks[:, :-off], walks[:, off:]
        else:
            a, b = walks[:, -off:], walks[:, :off]
        ok = (a != PAD) & (b != PAD)
        keys.append(a[ok] * num_nodes + b[ok])
    return np.concatenate(keys) if keys else np.zeros(0, np.int64)


def _merge(acc_keys, acc_counts, keys, counts):
    k = np.concatenate([acc_keys, keys])
    c = np.concatenate([acc_counts, counts])
    uniq, inv = np.unique(k, return_inverse=True)
    return uniq, np.bincount(inv, weights=c, minlength=len(uniq)).astype(np.int64)


def extract_context_pairs(corpus, cfg, num_nodes=None):
    """Count every (u_i, u_j) with ``i - left <= j <= i + right``, ``j != i``."""
    walks = corpus.walks if isinstance(corpus, WalkCorpus) else np.asarray(corpus)
    if len(walks) == 0:
        raise ValueError("empty walk corpus")
    if num_nodes is None:
        num_nodes = int(walks.max()) + 1
    keys = _pair_keys(walks, cfg.left_window, cfg.right_window, num_nodes)
    uniq, cnt = np.unique(keys, return_counts=True)
    return CooccurrenceCounts.from_keys(uniq, cnt, num_nodes)


def count_cooccurrences(graph, cfg, chunk_rounds=8):
    """Simulate walks round by round and accumulate D without keeping the corpus."""
    n = graph.num_nodes
    table = make_transition_pr(graph)
    acc_k = np.zeros(0, np.int64)
    acc_c = np.zeros(0, np.int64)
    pending = []
    for i, walks in enumerate(iter_walk_rounds(graph, cfg, table)):
        pending.append(_pair_keys(walks, cfg.left_window, cfg.right_window, n))
        if len(pending) >= chunk_rounds or i == cfg.walks_per_node - 1:
            k, c = np.unique(np.concatenate(pending), return_counts=True)
            acc_k, acc_c = _merge(acc_k, acc_c, k, c)
            pending = []
            logger.debug("walk round %d: %d distinct pairs", i + 1, len(acc_k))
    return CooccurrenceCounts.from_keys(acc_k, acc_c, n)
