"""Node embeddings, the manifold network f and the edge functions g.

The deep variants map each embedding row through

    FC(W1, b1) -> BatchNorm -> relu -> FC(W2, b2) -> BatchNorm

and score a pair either with a low-rank bilinear form (asymmetric) or a
weighted Hadamard product (symmetric). Shallow variants skip the network and
score the raw embeddings. Every layer has a hand-written backward pass.
"""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.utils import check_random_state

CHECKPOINT_MAGIC = b"ASYMPROJ"
CHECKPOINT_VERSION = 1

BN_EPS = 1e-5
BN_MOMENTUM = 0.99
NORM_EPS = 1e-12


@dataclass(frozen=True)
class EdgeModelKind:
    depth: str = "deep"
    symmetry: str = "asym"

    def __post_init__(self):
        if self.depth not in ("shallow", "deep"):
            raise ValueError(f"unknown depth {self.depth!r}")
        if self.symmetry not in ("sym", "asym"):
            raise ValueError(f"unknown symmetry {self.symmetry!r}")

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        aliases = {"symmetric": "sym", "asymmetric": "asym"}
        try:
            depth, sym = str(name).lower().replace("-", "_").split("_")
        except ValueError:
            raise ValueError(f"unknown model {name!r}; expected e.g. 'deep_asym'") from None
        return cls(depth, aliases.get(sym, sym))

    @property
    def deep(self):
        return self.depth == "deep"

    @property
    def asymmetric(self):
        return self.symmetry == "asym"

    @property
    def name(self):
        return f"{self.depth}_{self.symmetry}"


ALL_KINDS = tuple(EdgeModelKind(d, s) for d in ("shallow", "deep") for s in ("sym", "asym"))


@dataclass(frozen=True)
class ModelDims:
    num_nodes: int
    dim: int                  # D, embedding width
    hidden_dim: int = 0       # d1; 0 means 2 * D
    manifold_dim: int = 0     # d; 0 means D
    bottleneck: int = 0       # b; 0 means manifold width
    n_projections: int = 1    # h

    def resolved(self, kind):
        d1 = self.hidden_dim or 2 * self.dim
        d = (self.manifold_dim or self.dim) if kind.deep else self.dim
        b = self.bottleneck or d
        return ModelDims(self.num_nodes, self.dim, d1, d, b, self.n_projections)


class EdgeModel:
    """All trainable tensors plus BatchNorm running moments.

    Trainable tensors live in ``params`` under fixed names; see
    :meth:`trainable_names` for the order used by checkpoints.
    """

    def __init__(self, kind, dims, params, running=None, circular=False,
                 bn_eps=BN_EPS, bn_momentum=BN_MOMENTUM):
        self.kind = EdgeModelKind.parse(kind)
        self.dims = dims
        self.params = params
        self.running = running if running is not None else {}
        self.circular = bool(circular)
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum

    @property
    def dtype(self):
        return self.params["Y"].dtype

    @property
    def multi(self):
        return self.kind.asymmetric and self.dims.n_projections > 1

    def trainable_names(self):
        names = ["Y"]
        if self.kind.deep:
            names += ["W1", "b1", "gamma1", "beta1", "W2", "b2", "gamma2", "beta2"]
        if self.kind.asymmetric:
            names += ["L", "R"]
            if self.multi:
                names.append("wg")
        else:
            names.append("w")
        return names

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        m = self.copy()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        m.running = {k: v.astype(dtype) for k, v in m.running.items()}
        return m

    def num_parameters(self):
        return sum(v.size for v in self.params.values())

    def __repr__(self):
        d = self.dims
        return (f"EdgeModel({self.kind.name}, N={d.num_nodes}, D={d.dim}, d1={d.hidden_dim}, "
                f"d={d.manifold_dim}, b={d.bottleneck}, h={d.n_projections})")


def init_params(dims, kind, seed=0, circular=False, dtype=np.float64):
    """Random initial model.

    Embeddings are uniform in ``(-0.5/D, 0.5/D)``; dense and projection weights
    are uniform in ``(-1/sqrt(fan_in), 1/sqrt(fan_in))``; BatchNorm starts at
    gamma = 1, beta = 0 with running moments (0, 1).
    """
    kind = EdgeModelKind.parse(kind)
    if isinstance(dims, dict):
        dims = ModelDims(**dims)
    dims = dims.resolved(kind)
    if dims.bottleneck > dims.manifold_dim:
        raise ValueError(f"bottleneck b={dims.bottleneck} exceeds manifold width "
                         f"d={dims.manifold_dim}")
    if min(dims.num_nodes, dims.dim, dims.bottleneck, dims.n_projections) < 1:
        raise ValueError("all dimensions must be positive")
    rng = check_random_state(seed)
    D, d1, d, b, h = (dims.dim, dims.hidden_dim, dims.manifold_dim, dims.bottleneck,
                      dims.n_projections)

    def unif(shape, scale):
        return rng.uniform(-scale, scale, size=shape).astype(dtype)

    params = {"Y": unif((dims.num_nodes, D), 0.5 / D)}
    running = {}
    if kind.deep:
        params.update(
            W1=unif((d1, D), 1 / np.sqrt(D)), b1=np.zeros(d1, dtype),
            gamma1=np.ones(d1, dtype), beta1=np.zeros(d1, dtype),
            W2=unif((d, d1), 1 / np.sqrt(d1)), b2=np.zeros(d, dtype),
            gamma2=np.ones(d, dtype), beta2=np.zeros(d, dtype))
        running.update(mean1=np.zeros(d1, dtype), var1=np.ones(d1, dtype),
                       mean2=np.zeros(d, dtype), var2=np.ones(d, dtype))
    if kind.asymmetric:
        params["L"] = unif((h, d, b), 1 / np.sqrt(d))
        params["R"] = unif((h, b, d), 1 / np.sqrt(d))
        if h > 1:
            params["wg"] = rng.uniform(0.5, 1.5, size=h).astype(dtype) / h
    else:
        params["w"] = rng.uniform(0.5, 1.5, size=d).astype(dtype)
    return EdgeModel(kind, dims, params, running, circular=circular)


# layers -------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode,
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """BatchNorm over axis 0. Train mode updates the running moments in place."""
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("train-mode BatchNorm needs a batch of at least 2 rows")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mu) * inv_std
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
        return gamma * x_hat + beta, (x_hat, inv_std, gamma)
    if mode == "inference":
        x_hat = (x - running_mean) / np.sqrt(running_var + eps)
        return gamma * x_hat + beta, None
    raise ValueError(f"unknown mode {mode!r}")


def batchnorm_backward(dout, cache):
    x_hat, inv_std, gamma = cache
    n = dout.shape[0]
    dgamma = (dout * x_hat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dx_hat = dout * gamma
    dx = inv_std / n * (n * dx_hat - dx_hat.sum(axis=0) - x_hat * (dx_hat * x_hat).sum(axis=0))
    return dx, dgamma, dbeta


def forward_f(model, x, mode="inference"):
    """Manifold coordinates f(x) for rows ``x``; returns (out, cache).

    Shallow models return ``x`` unchanged.
    """
    if not model.kind.deep:
        return x, None
    p, r = model.params, model.running
    a1 = x @ p["W1"].T + p["b1"]
    n1, bn1 = batchnorm_forward(a1, p["gamma1"], p["beta1"], r["mean1"], r["var1"], mode,
                                model.bn_eps, model.bn_momentum)
    h1 = np.maximum(n1, 0)
    a2 = h1 @ p["W2"].T + p["b2"]
    out, bn2 = batchnorm_forward(a2, p["gamma2"], p["beta2"], r["mean2"], r["var2"], mode,
                                 model.bn_eps, model.bn_momentum)
    return out, (x, bn1, n1, h1, bn2)


def backward_f(model, dout, cache, grads):
    """Accumulate parameter gradients into ``grads``; return d/dx."""
    if not model.kind.deep:
        return dout
    p = model.params
    x, bn1, n1, h1, bn2 = cache
    if bn2 is None:
        raise ValueError("backward needs a train-mode forward pass")
    da2, grads["gamma2"], grads["beta2"] = batchnorm_backward(dout, bn2)
    grads["W2"] = da2.T @ h1
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ p["W2"]
    dn1 = dh1 * (n1 > 0)
    da1, grads["gamma1"], grads["beta1"] = batchnorm_backward(dn1, bn1)
    grads["W1"] = da1.T @ x
    grads["b1"] = da1.sum(axis=0)
    return da1 @ p["W1"]


def _normalize(x):
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norm, NORM_EPS), norm


def _normalize_backward(dn, n, norm):
    return (dn - n * (dn * n).sum(axis=-1, keepdims=True)) / np.maximum(norm, NORM_EPS)


def left_right(model, phi_a, phi_c):
    """Left projections of ``phi_a`` and right projections of ``phi_c``: (m, h, b) each."""
    L, R = model.params["L"], model.params["R"]
    left = np.einsum("md,hdb->mhb", phi_a, L)
    right = np.einsum("md,hbd->mhb", phi_c, R)
    return left, right


def pair_scores(model, phi_a, phi_c, cache=False):
    """g for aligned rows of source coordinates ``phi_a`` and target ``phi_c``."""
    p = model.params
    if not model.kind.asymmetric:
        # the product is formed first so that swapping u and v is bitwise exact
        s = (p["w"] * (phi_a * phi_c)).sum(axis=1)
        return (s, (phi_a, phi_c)) if cache else s
    left, right = left_right(model, phi_a, phi_c)
    lnorm = rnorm = None
    if model.circular:
        left, lnorm = _normalize(left)
        right, rnorm = _normalize(right)
    per = (left * right).sum(axis=2)            # (m, h)
    if model.multi:
        s = np.maximum(per, 0) @ p["wg"]
    else:
        s = per[:, 0]
    if cache:
        return s, (phi_a, phi_c, left, right, lnorm, rnorm, per)
    return s


def pair_scores_backward(model, ds, cache, grads):
    """Backprop ``ds`` (m,) through :func:`pair_scores`; returns (dphi_a, dphi_c)."""
    p = model.params
    if not model.kind.asymmetric:
        phi_a, phi_c = cache
        w = p["w"]
        grads["w"] = grads.get("w", 0) + (ds[:, None] * phi_a * phi_c).sum(axis=0)
        return ds[:, None] * w * phi_c, ds[:, None] * w * phi_a
    phi_a, phi_c, left, right, lnorm, rnorm, per = cache
    if model.multi:
        grads["wg"] = grads.get("wg", 0) + np.maximum(per, 0).T @ ds
        dper = ds[:, None] * p["wg"] * (per > 0)
    else:
        dper = ds[:, None]
    dleft = dper[:, :, None] * right
    dright = dper[:, :, None] * left
    if model.circular:
        dleft = _normalize_backward(dleft, left, lnorm)
        dright = _normalize_backward(dright, right, rnorm)
    grads["L"] = grads.get("L", 0) + np.einsum("md,mhb->hdb", phi_a, dleft)
    grads["R"] = grads.get("R", 0) + np.einsum("mhb,md->hbd", dright, phi_c)
    dphi_a = np.einsum("mhb,hdb->md", dleft, p["L"])
    dphi_c = np.einsum("mhb,hbd->md", dright, p["R"])
    return dphi_a, dphi_c


def log_sigmoid(x):
    """log(sigma(x)) without overflow."""
    return -np.logaddexp(0, -x)


def sigmoid(x):
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def batch_objective(model, anchors, contexts, negatives, neg_mask=None, mode="train",
                    grad=True):
    """Negative-sampled objective of one minibatch and its gradients.

    Parameters
    ----------
    anchors, contexts : (B,) int arrays of pair endpoints drawn from D.
    negatives : (B, K) int array of negative nodes per pair.
    neg_mask : (B, K) float/bool array; zero entries drop a negative term.

    Returns
    -------
    objective : float
        Mean over the batch of ``log s(g(u,v)) + sum_k log(1 - s(g(u,v_k)))``.
    grads : dict
        Gradients of the *loss* (negated objective). ``grads["Y_rows"]`` holds
        per-position embedding gradients for all ``B*(2+K)`` gathered rows
        (anchors, then contexts, then negatives), ``grads["Y_nodes"]`` the
        matching node ids.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    contexts = np.asarray(contexts, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    B, K = negatives.shape
    if neg_mask is None:
        neg_mask = np.ones((B, K))
    neg_mask = np.asarray(neg_mask, dtype=model.dtype)
    nodes = np.concatenate([anchors, contexts, negatives.ravel()])
    x = model.params["Y"][nodes]
    phi, fcache = forward_f(model, x, mode)
    phi_u, phi_v, phi_n = phi[:B], phi[B:2 * B], phi[2 * B:]
    phi_u_rep = np.repeat(phi_u, K, axis=0)
    s_pos, pcache = pair_scores(model, phi_u, phi_v, cache=True)
    s_neg, ncache = pair_scores(model, phi_u_rep, phi_n, cache=True)
    s_neg = s_neg.reshape(B, K)
    per_pair = log_sigmoid(s_pos) + (neg_mask * log_sigmoid(-s_neg)).sum(axis=1)
    objective = float(per_pair.mean())
    if not grad:
        return objective, None
    grads = {}
    ds_pos = -sigmoid(-s_pos) / B
    ds_neg = (neg_mask * sigmoid(s_neg) / B).ravel()
    dphi_u, dphi_v = pair_scores_backward(model, ds_pos.astype(model.dtype), pcache, grads)
    dphi_u_rep, dphi_n = pair_scores_backward(model, ds_neg.astype(model.dtype), ncache, grads)
    dphi_u = dphi_u + dphi_u_rep.reshape(B, K, -1).sum(axis=1)
    dphi = np.concatenate([dphi_u, dphi_v, dphi_n])
    dx = backward_f(model, dphi, fcache, grads)
    grads["Y_rows"] = dx
    grads["Y_nodes"] = nodes
    return objective, grads


def dense_embedding_grad(model, grads, anchor_only=True, batch_size=None):
    """Scatter per-position row gradients into a full (N, D) array.

    With ``anchor_only`` only the first ``batch_size`` positions (the anchors)
    contribute; context and negative rows are dropped.
    """
    rows, nodes = grads["Y_rows"], grads["Y_nodes"]
    if anchor_only:
        rows, nodes = rows[:batch_size], nodes[:batch_size]
    out = np.zeros_like(model.params["Y"])
    np.add.at(out, nodes, rows)
    return out


# inference ------------------------------------------------------------------

def node_coordinates(model, nodes=None, batch=65536):
    """Inference-mode manifold coordinates (or raw embeddings for shallow models)."""
    Y = model.params["Y"] if nodes is None else model.params["Y"][np.asarray(nodes)]
    if not model.kind.deep:
        return Y
    out = [forward_f(model, Y[i:i + batch], "inference")[0] for i in range(0, len(Y), batch)]
    return np.concatenate(out) if out else Y[:0]


def score_pairs(model, pairs, phi=None):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if phi is None:
        phi = node_coordinates(model)
    return pair_scores(model, phi[pairs[:, 0]], phi[pairs[:, 1]])


def edge_score(model, u, v):
    return float(score_pairs(model, [[u, v]])[0])


def edge_score_multi(model, u, v):
    """Multi-projection score: ``sum_i wg[i] * relu(g_i(u, v))``."""
    if not model.multi:
        raise ValueError("model has a single projection")
    return edge_score(model, u, v)


class EdgeRepresentation:
    """Per-node left/right vectors; scores need only these arrays.

    For asymmetric models ``left`` and ``right`` have shape (N, h, b). For
    symmetric models ``phi`` holds f(Y) (or Y) and ``w`` the Hadamard weights;
    ``left = w * phi`` and ``right = phi`` then reproduce the score.
    """

    def __init__(self, left, right, wg=None, phi=None, w=None):
        self.left = left
        self.right = right
        self.wg = wg
        self.phi = phi
        self.w = w

    @property
    def symmetric(self):
        return self.phi is not None

    def score(self, u, v):
        per = (self.left[u] * self.right[v]).sum(axis=-1)
        if self.symmetric:
            return per
        if self.wg is not None:
            return np.maximum(per, 0) @ self.wg
        return per[..., 0]

    def width(self):
        """Values stored per node."""
        if self.symmetric:
            return self.phi.shape[1]
        return 2 * self.left.shape[1] * self.left.shape[2]

    def save_tsv(self, path, raw_ids=None):
        L = self.left.reshape(len(self.left), -1)
        R = self.right.reshape(len(self.right), -1)
        with open(path, "w") as fh:
            for tag, arr in (("#left", L), ("#right", R)):
                fh.write(tag + "\n")
                for i, row in enumerate(arr):
                    node = raw_ids[i] if raw_ids is not None else i
                    fh.write(f"{node}\t" + "\t".join(f"{x:.9g}" for x in row) + "\n")

    @staticmethod
    def load_tsv(path):
        sections = {}
        cur = None
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    cur = sections.setdefault(line[1:], [])
                elif line:
                    cur.append([float(x) for x in line.split("\t")[1:]])
        return np.array(sections["left"]), np.array(sections["right"])


def export_edge_representations(model):
    phi = node_coordinates(model)
    p = model.params
    if not model.kind.asymmetric:
        w = p["w"]
        return EdgeRepresentation(w * phi, phi.copy(), phi=phi, w=w.copy())
    left, right = left_right(model, phi, phi)
    if model.circular:
        left = _normalize(left)[0]
        right = _normalize(right)[0]
    return EdgeRepresentation(left, right, wg=p["wg"].copy() if model.multi else None)


def project_unit_norm(reps):
    """Rescale every left and right vector to unit L2 norm."""
    out = []
    for side, arr in (("left", reps.left), ("right", reps.right)):
        norm = np.sqrt((arr * arr).sum(axis=-1, keepdims=True))
        bad = np.argwhere(norm[..., 0] == 0)
        if len(bad):
            raise ValueError(f"zero-norm {side} vector at node {int(bad[0][0])}")
        out.append(arr / norm)
    return EdgeRepresentation(out[0], out[1], wg=reps.wg, phi=reps.phi, w=reps.w)


# checkpoints ------------------------------------------------------------------

def save_checkpoint(model, path, extra=None):
    """Binary checkpoint: magic, version, JSON header, then float32 tensors in order."""
    names = model.trainable_names()
    running = sorted(model.running)
    d = model.dims
    header = {
        "kind": model.kind.name, "circular": model.circular,
        "dims": {"num_nodes": d.num_nodes, "dim": d.dim, "hidden_dim": d.hidden_dim,
                 "manifold_dim": d.manifold_dim, "bottleneck": d.bottleneck,
                 "n_projections": d.n_projections},
        "h": d.n_projections, "b": d.bottleneck,
        "bn_eps": model.bn_eps, "bn_momentum": model.bn_momentum,
        "tensors": [[n, list(model.params[n].shape)] for n in names]
                   + [[n, list(model.running[n].shape)] for n in running],
        "extra": extra or {},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f4").tobytes())
        for n in running:
            fh.write(np.ascontiguousarray(model.running[n], dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float64):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    buf = io.BytesIO(data[len(CHECKPOINT_MAGIC):])
    version, hlen = struct.unpack("<II", buf.read(8))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(buf.read(hlen))
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(dtype)
    kind = EdgeModelKind.parse(header["kind"])
    model = EdgeModel(kind, ModelDims(**header["dims"]), {}, {}, circular=header["circular"],
                      bn_eps=header["bn_eps"], bn_momentum=header["bn_momentum"])
    for n, arr in tensors.items():
        (model.params if n in model.trainable_names() else model.running)[n] = arr
    model.extra = header.get("extra", {})
    return model
