"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from .graph import Graph


def check_pairs(pairs, num_nodes=None, name="pairs"):
    """Return ``pairs`` as a contiguous (n, 2) int64 array.

    Raises ValueError on a wrong shape, non-integer values or ids outside
    ``[0, num_nodes)``.
    """
    arr = np.asarray(pairs)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError(f"{name} must hold integer node ids")
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    if arr.min() < 0 or (num_nodes is not None and arr.max() >= num_nodes):
        raise ValueError(f"{name} reference node ids outside [0, {num_nodes})")
    return arr


def check_labels(y, n):
    y = np.asarray(y).ravel()
    if len(y) != n:
        raise ValueError(f"got {len(y)} labels for {n} pairs")
    vals = np.unique(y)
    if not np.all(np.isin(vals, [0, 1])):
        raise ValueError("labels must be 0/1")
    return y.astype(bool)


def check_graph(X, directed=True, num_nodes=None):
    """Accept a Graph or an edge array and return a Graph."""
    if isinstance(X, Graph):
        return X
    edges = check_pairs(X, name="edges")
    if len(edges) == 0:
        raise ValueError("no edges")
    n = int(edges.max()) + 1 if num_nodes is None else int(num_nodes)
    if edges.max() >= n:
        raise ValueError(f"edge ids exceed num_nodes={n}")
    return Graph.from_edges(edges, n, directed)
