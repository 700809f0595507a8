"""Graph container, edge-list ingestion and link-prediction edge splits."""

from __future__ import annotations

import gzip
import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree
from sklearn.utils import check_random_state

logger = logging.getLogger(__name__)

SPLIT_FILES = ("train.pos", "test.pos", "train.neg", "test.neg")


class EdgeListParseError(ValueError):
    """Malformed line in an edge-list file."""

    def __init__(self, path, lineno, line, reason):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}: {line.strip()!r}")


class NegativeSamplingError(RuntimeError):
    pass


class Graph:
    """Immutable adjacency structure over dense node ids ``0..num_nodes-1``.

    Adjacency is kept as a CSR matrix whose rows hold sorted, duplicate-free
    neighbor lists with weights. Undirected graphs store both orientations of
    every edge, so ``out_adj`` and ``in_adj`` coincide.
    """

    def __init__(self, adj, directed, raw_ids=None):
        coo = sp.coo_matrix(adj, dtype=np.float64)
        if coo.shape[0] != coo.shape[1]:
            raise ValueError("adjacency must be square")
        off = coo.row != coo.col
        adj = sp.csr_matrix((coo.data[off], (coo.row[off], coo.col[off])), shape=coo.shape)
        adj.sum_duplicates()
        adj.eliminate_zeros()
        adj.sort_indices()
        if adj.nnz and adj.data.min() < 0:
            raise ValueError("edge weights must be non-negative")
        if not directed:
            diff = adj - adj.T
            if diff.nnz and np.abs(diff.data).max() > 0:
                raise ValueError("undirected adjacency must be symmetric")
        adj.data.setflags(write=False)
        adj.indices.setflags(write=False)
        adj.indptr.setflags(write=False)
        self._adj = adj
        self.directed = bool(directed)
        if raw_ids is None:
            raw_ids = [str(i) for i in range(adj.shape[0])]
        if len(raw_ids) != adj.shape[0]:
            raise ValueError("raw_ids length must equal number of nodes")
        self.raw_ids = list(raw_ids)
        self._in_adj = None
        self._keys = None

    @classmethod
    def from_edges(cls, edges, num_nodes, directed, weights=None, raw_ids=None):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(edges))
        src, dst = edges[:, 0], edges[:, 1]
        w = np.asarray(weights, dtype=np.float64)
        keep = src != dst
        src, dst, w = src[keep], dst[keep], w[keep]
        if not directed:
            # canonicalize so duplicate (u,v)/(v,u) lines collapse into one edge
            lo, hi = np.minimum(src, dst), np.maximum(src, dst)
            upper = sp.coo_matrix((w, (lo, hi)), shape=(num_nodes, num_nodes)).tocsr()
            upper.sum_duplicates()
            adj = upper + upper.T
        else:
            adj = sp.coo_matrix((w, (src, dst)), shape=(num_nodes, num_nodes)).tocsr()
        return cls(adj, directed, raw_ids=raw_ids)

    @property
    def num_nodes(self):
        return self._adj.shape[0]

    @property
    def out_adj(self):
        return self._adj

    @property
    def in_adj(self):
        if not self.directed:
            return self._adj
        if self._in_adj is None:
            self._in_adj = self._adj.T.tocsr()
            self._in_adj.sort_indices()
        return self._in_adj

    @property
    def num_edges(self):
        nnz = self._adj.nnz
        return nnz if self.directed else nnz // 2

    def neighbors(self, u):
        a = self._adj
        return a.indices[a.indptr[u]:a.indptr[u + 1]]

    def weights(self, u):
        a = self._adj
        return a.data[a.indptr[u]:a.indptr[u + 1]]

    def out_degree(self):
        return np.diff(self._adj.indptr)

    def edges(self):
        """Edge array of shape (|E|, 2); undirected edges appear once as (u<v)."""
        coo = self._adj.tocoo()
        pairs = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
        if not self.directed:
            pairs = pairs[pairs[:, 0] < pairs[:, 1]]
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]

    def edge_weights(self):
        coo = self._adj.tocoo()
        mask = np.ones(coo.nnz, dtype=bool) if self.directed else coo.row < coo.col
        row, col, w = coo.row[mask], coo.col[mask], coo.data[mask]
        return w[np.lexsort((col, row))]

    def _edge_keys(self):
        # sorted row*N+col keys of every stored orientation, for O(log E) lookups
        if self._keys is None:
            a = self._adj
            rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(a.indptr))
            self._keys = rows * self.num_nodes + a.indices
        return self._keys

    def has_edges(self, u, v):
        """Vectorized membership test; undirected graphs ignore orientation."""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        return _in_sorted(self._edge_keys(), u * self.num_nodes + v)

    def has_edge(self, u, v):
        return bool(self.has_edges(u, v))

    def undirected_view(self):
        a = self._adj
        return ((a + a.T) > 0).astype(np.float64).tocsr()

    def subgraph(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        sub = self._adj[nodes][:, nodes]
        return Graph(sub, self.directed, raw_ids=[self.raw_ids[i] for i in nodes])

    def with_edges(self, edges):
        """Same node set, restricted to ``edges`` (weights carried over)."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self._adj[edges[:, 0], edges[:, 1]]).ravel() if len(edges) else None
        return Graph.from_edges(edges, self.num_nodes, self.directed, weights=w,
                                raw_ids=self.raw_ids)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if self.directed != other.directed or self.num_nodes != other.num_nodes:
            return False
        a, b = self._adj, other._adj
        return (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
                and np.allclose(a.data, b.data))

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"Graph({kind}, num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def _in_sorted(sorted_arr, values):
    values = np.asarray(values)
    if len(sorted_arr) == 0:
        return np.zeros(values.shape, dtype=bool)
    pos = np.minimum(np.searchsorted(sorted_arr, values), len(sorted_arr) - 1)
    return sorted_arr[pos] == values


def _open_text(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt")
    return open(path)


def load_edge_list(path, directed):
    """Read a whitespace-separated edge list into a :class:`Graph`.

    Lines starting with ``#`` are comments, an optional third column is a
    non-negative weight. Raw ids are remapped to dense ids in order of first
    appearance; duplicate edges have their weights summed and self-loops
    are dropped.
    """
    id_of = {}
    src, dst, wts = [], [], []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) not in (2, 3):
                raise EdgeListParseError(path, lineno, line, "expected 2 or 3 columns")
            w = 1.0
            if len(parts) == 3:
                try:
                    w = float(parts[2])
                except ValueError:
                    raise EdgeListParseError(path, lineno, line, "weight is not a number") from None
                if not math.isfinite(w):
                    raise EdgeListParseError(path, lineno, line, "weight is not finite")
                if w < 0:
                    raise ValueError(f"{path}:{lineno}: negative edge weight {w}")
            a = id_of.setdefault(parts[0], len(id_of))
            b = id_of.setdefault(parts[1], len(id_of))
            src.append(a)
            dst.append(b)
            wts.append(w)
    if not src:
        raise ValueError(f"{path}: no edges")
    raw_ids = list(id_of)
    return Graph.from_edges(np.stack([src, dst], axis=1), len(raw_ids), directed,
                            weights=wts, raw_ids=raw_ids)


def load_mat_network(path, key="network"):
    """Undirected graph from a MATLAB file holding a sparse adjacency (node2vec's PPI)."""
    from scipy.io import loadmat

    adj = sp.csr_matrix(loadmat(path)[key], dtype=np.float64)
    adj = ((adj + adj.T) > 0).astype(np.float64)
    return Graph(adj, directed=False)


def write_edge_list(graph, path, weights=True):
    edges = graph.edges()
    w = graph.edge_weights()
    unit = np.all(w == 1.0)
    with open(path, "w") as fh:
        for (u, v), x in zip(edges, w):
            if weights and not unit:
                fh.write(f"{u}\t{v}\t{x:.17g}\n")
            else:
                fh.write(f"{u}\t{v}\n")


def write_id_map(graph, path):
    with open(path, "w") as fh:
        for dense, raw in enumerate(graph.raw_ids):
            fh.write(f"{raw}\t{dense}\n")


def read_id_map(path):
    raw = {}
    with open(path) as fh:
        for line in fh:
            r, d = line.rstrip("\n").split("\t")
            raw[int(d)] = r
    return [raw[i] for i in range(len(raw))]


def load_graph(edge_path, id_map_path, directed):
    """Reload a graph written by :func:`write_edge_list` with its id map."""
    raw_ids = read_id_map(id_map_path)
    edges, w = read_edges(edge_path, with_weights=True)
    return Graph.from_edges(edges, len(raw_ids), directed, weights=w, raw_ids=raw_ids)


def read_edges(path, with_weights=False):
    rows = []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if s and not s.startswith("#"):
                rows.append(s.split())
    if not rows:
        edges = np.zeros((0, 2), dtype=np.int64)
        return (edges, np.zeros(0)) if with_weights else edges
    edges = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64)
    if with_weights:
        w = np.array([float(r[2]) if len(r) > 2 else 1.0 for r in rows])
        return edges, w
    return edges


def largest_wcc(graph):
    """Induced subgraph on the largest weakly connected component, ids re-densified."""
    if graph.num_nodes == 0:
        raise ValueError("empty graph")
    n_comp, labels = connected_components(graph.out_adj, directed=True, connection="weak")
    if n_comp == 1:
        return graph
    sizes = np.bincount(labels)
    keep = np.flatnonzero(labels == np.argmax(sizes))
    return graph.subgraph(keep)


def is_connected(num_nodes, edges):
    """Weak connectivity of an edge set by BFS; used as an independent check."""
    if num_nodes <= 1:
        return True
    adj = [[] for _ in range(num_nodes)]
    for u, v in np.asarray(edges).reshape(-1, 2):
        adj[u].append(v)
        adj[v].append(u)
    seen = np.zeros(num_nodes, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if not seen[y]:
                seen[y] = True
                stack.append(y)
    return bool(seen.all())


@dataclass(frozen=True)
class EdgeSplit:
    """Train/test positive and negative edge sets, each an (m, 2) int array."""

    train_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    test_neg: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    seed: int | None = None

    def __post_init__(self):
        for name in ("train_pos", "test_pos", "train_neg", "test_neg"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def replace(self, **kw):
        d = dict(train_pos=self.train_pos, test_pos=self.test_pos, train_neg=self.train_neg,
                 test_neg=self.test_neg, seed=self.seed)
        d.update(kw)
        return EdgeSplit(**d)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for name, arr in zip(SPLIT_FILES, (self.train_pos, self.test_pos,
                                           self.train_neg, self.test_neg)):
            with open(os.path.join(directory, name), "w") as fh:
                for u, v in arr:
                    fh.write(f"{u}\t{v}\n")

    @classmethod
    def load(cls, directory, seed=None):
        arrs = [read_edges(os.path.join(directory, name)) for name in SPLIT_FILES]
        return cls(*arrs, seed=seed)


def _canonical(edges, directed):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if directed:
        return edges
    return np.stack([edges.min(axis=1), edges.max(axis=1)], axis=1)


def split_edges(graph, seed=0):
    """Split edges in half with the training half weakly connected.

    A random spanning tree of the undirected view (minimum spanning tree under
    i.i.d. uniform weights) is forced into the training side, then the
    remaining edges are assigned at random until ``ceil(|E|/2)`` edges train.
    If the tree alone is larger than that, a warning is emitted and the
    larger training side is kept.
    """
    rng = check_random_state(seed)
    edges = graph.edges()
    m = len(edges)
    n = graph.num_nodes
    und = sp.triu(graph.undirected_view(), k=1).tocoo()
    rand_w = sp.coo_matrix((rng.uniform(1.0, 2.0, und.nnz), (und.row, und.col)), shape=(n, n))
    tree = minimum_spanning_tree(rand_w.tocsr()).tocoo()
    tree_pairs = np.stack([np.minimum(tree.row, tree.col), np.maximum(tree.row, tree.col)], 1)

    in_tree = np.zeros(m, dtype=bool)
    if graph.directed:
        # each tree pair maps to one existing orientation, chosen at random if reciprocal
        fwd = graph.has_edges(tree_pairs[:, 0], tree_pairs[:, 1])
        bwd = graph.has_edges(tree_pairs[:, 1], tree_pairs[:, 0])
        flip = ~fwd | (bwd & (rng.uniform(size=len(tree_pairs)) < 0.5))
        chosen = np.where(flip[:, None], tree_pairs[:, ::-1], tree_pairs)
    else:
        chosen = tree_pairs
    keys = edges[:, 0] * n + edges[:, 1]
    idx = np.searchsorted(keys, chosen[:, 0] * n + chosen[:, 1])
    in_tree[idx] = True

    target = math.ceil(m / 2)
    n_tree = int(in_tree.sum())
    if n_tree > target:
        warnings.warn(f"spanning tree has {n_tree} edges, more than half of {m}; "
                      "training side enlarged", RuntimeWarning, stacklevel=2)
        target = n_tree
    rest = np.flatnonzero(~in_tree)
    extra = rng.permutation(rest)[:target - n_tree]
    train_mask = in_tree.copy()
    train_mask[extra] = True
    return EdgeSplit(train_pos=edges[train_mask], test_pos=edges[~train_mask],
                     seed=None if seed is None or not np.isscalar(seed) else int(seed))


def _sample_absent_pairs(n, target, exclude_keys, directed, rng, max_attempts, what):
    """Rejection-sample ``target`` distinct node pairs whose keys avoid ``exclude_keys``."""
    found = np.zeros(0, dtype=np.int64)
    attempts = 0
    while len(found) < target and attempts < max_attempts:
        batch = min(max(2 * (target - len(found)), 64), max_attempts - attempts)
        attempts += batch
        u = rng.randint(0, n, size=batch).astype(np.int64)
        v = rng.randint(0, n, size=batch).astype(np.int64)
        ok = u != v
        u, v = u[ok], v[ok]
        if not directed:
            u, v = np.minimum(u, v), np.maximum(u, v)
        k = u * n + v
        k = k[~np.isin(k, exclude_keys)]
        # keep first occurrences in draw order so results do not depend on sorting
        k = np.concatenate([found, k])
        _, first = np.unique(k, return_index=True)
        found = k[np.sort(first)]
    if len(found) < target:
        raise NegativeSamplingError(
            f"could only sample {len(found)} of {target} {what} negatives "
            f"after {attempts} attempts; the complement is too small")
    found = found[:target]
    return np.stack([found // n, found % n], axis=1)


def sample_negative_edges(graph, split, seed=0, attempts_factor=100, allow_partial=False):
    """Fill ``train_neg`` (avoiding train positives) and ``test_neg`` (avoiding all of E).

    Pairs are drawn uniformly among ordered (directed) or unordered
    (undirected) pairs of distinct nodes. Sampling gives up after
    ``attempts_factor`` times the requested count; with ``allow_partial`` the
    shortfall is accepted with a warning instead of raising.
    """
    rng = check_random_state(seed)
    n = graph.num_nodes
    directed = graph.directed

    def keys(e):
        e = _canonical(e, directed)
        return e[:, 0] * n + e[:, 1]

    out = {}
    for name, target, excl in (("train", len(split.train_pos), keys(split.train_pos)),
                               ("test", len(split.test_pos), keys(graph.edges()))):
        excl = np.unique(excl)
        pool = n * (n - 1) if directed else n * (n - 1) // 2
        try:
            if pool - len(excl) < target:
                raise NegativeSamplingError(
                    f"{name} negatives: need {target} but only {pool - len(excl)} "
                    "non-edges exist")
            out[name] = _sample_absent_pairs(n, target, excl, directed, rng,
                                             attempts_factor * max(target, 1), name)
        except NegativeSamplingError:
            if not allow_partial:
                raise
            complement = _complement_pairs(n, excl, directed)
            picked = rng.permutation(len(complement))[:target]
            out[name] = complement[np.sort(picked)]
            warnings.warn(f"{name} negatives truncated to {len(out[name])} of {target}",
                          RuntimeWarning, stacklevel=2)
    return split.replace(train_neg=out["train"], test_neg=out["test"])


def _complement_pairs(n, exclude_keys, directed):
    u, v = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    u, v = u.ravel(), v.ravel()
    mask = (u != v) if directed else (u < v)
    k = u[mask] * n + v[mask]
    k = k[~np.isin(k, exclude_keys)]
    return np.stack([k // n, k % n], axis=1)


def extend_directed_test_negatives(graph, split):
    """Add every reversal (v, u) of a one-directional edge (u, v) to ``test_neg``."""
    if not graph.directed:
        raise ValueError("reversal extension only applies to directed graphs")
    e = graph.edges()
    one_way = ~graph.has_edges(e[:, 1], e[:, 0])
    rev = e[one_way][:, ::-1]
    n = graph.num_nodes
    existing = split.test_neg[:, 0] * n + split.test_neg[:, 1]
    rk = rev[:, 0] * n + rev[:, 1]
    rev = rev[~np.isin(rk, existing)]
    return split.replace(test_neg=np.concatenate([split.test_neg, rev]))


@dataclass(frozen=True)
class NegativeSets:
    """Per-node negative candidates in CSR layout: ``indices[indptr[u]:indptr[u+1]]``."""

    indptr: np.ndarray
    indices: np.ndarray

    def __getitem__(self, u):
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def __len__(self):
        return len(self.indptr) - 1

    def sizes(self):
        return np.diff(self.indptr)


def build_negative_sets(graph, train_pos, per_node, seed=0):
    """Sample up to ``per_node`` uniform non-neighbors for every node.

    Neighborhoods come from ``train_pos``; for directed graphs only outgoing
    edges count. Nodes with fewer non-neighbors get the exact (short)
    complement and a warning.
    """
    rng = check_random_state(seed)
    n = graph.num_nodes
    train = graph.with_edges(train_pos) if train_pos is not None else graph
    adj = train.out_adj
    indptr = [0]
    chunks = []
    short = 0
    for u in range(n):
        nbrs = adj.indices[adj.indptr[u]:adj.indptr[u + 1]]
        available = n - 1 - len(nbrs)
        if available <= per_node:
            if available < per_node:
                short += 1
            mask = np.ones(n, dtype=bool)
            mask[nbrs] = False
            mask[u] = False
            picked = rng.permutation(np.flatnonzero(mask))
        else:
            picked = np.zeros(0, dtype=np.int64)
            while len(picked) < per_node:
                cand = rng.randint(0, n, size=2 * per_node + 8)
                cand = cand[cand != u]
                cand = np.concatenate([picked, cand[~_in_sorted(nbrs, cand)]])
                _, first = np.unique(cand, return_index=True)
                picked = cand[np.sort(first)]
            picked = picked[:per_node]
        chunks.append(np.asarray(picked, dtype=np.int64))
        indptr.append(indptr[-1] + len(picked))
    if short:
        warnings.warn(f"{short} node(s) have fewer than {per_node} non-neighbors; "
                      "their negative sets are short", RuntimeWarning, stacklevel=2)
    indices = np.concatenate(chunks) if chunks else np.zeros(0, np.int64)
    return NegativeSets(np.asarray(indptr, dtype=np.int64), indices)
