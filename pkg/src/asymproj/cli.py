"""Command-line pipeline: ingest, split, walk, train, eval, run and export-plot.

Every command works inside a workspace directory that holds a
``manifest.json``. Each stage records the hash of its own configuration and
of the upstream stage it consumed, so artifacts from different settings are
never mixed.
"""

from __future__ import annotations

import argparse
import colorsys
import dataclasses
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .graph import (EdgeListParseError, EdgeSplit, Graph, NegativeSamplingError, build_negative_sets,
                    extend_directed_test_negatives, largest_wcc, load_edge_list,
                    load_mat_network, load_graph, sample_negative_edges, split_edges,
                    write_edge_list, write_id_map)
from .metrics import (BASELINE_SCORERS, embedding_norm_stats, evaluate_link_prediction,
                      metrics_report, norm_std_percentiles, score_split, write_metrics,
                      write_scored_edges)
from .model import (EdgeModelKind, ModelDims, export_edge_representations, init_params,
                    load_checkpoint, node_coordinates, save_checkpoint, score_pairs)
from .training import TrainConfig, train, write_stats_csv
from .walks import CooccurrenceCounts, WalkConfig, count_cooccurrences, sample_walks

logger = logging.getLogger("asymproj")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4
UPSTREAM = {"split": "ingest", "walk": "split", "train": "walk", "eval": "split",
            "export-plot": "train"}
THREADS_ENV = "ASYMPROJ_THREADS"

GRAPH_FILE = "graph.tsv"
IDS_FILE = "ids.tsv"
SPLIT_DIR = "split"
TRAIN_GRAPH_FILE = "train_graph.tsv"
COUNTS_FILE = "counts.tsv"
WALKS_FILE = "walks.txt"
CKPT_FILE = "model.ckpt"
STATS_FILE = "stats.csv"
REPS_FILE = "reps.tsv"


class StageError(Exception):
    """Raised for stage-order and manifest violations."""


class DivergedError(Exception):
    pass


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class PipelineManifest:
    """Per-workspace record of completed stages and their configs."""

    name = "manifest.json"

    def __init__(self, workspace):
        self.workspace = Path(workspace)
        self.path = self.workspace / self.name
        self.data = {"stages": {}}
        if self.path.exists():
            with open(self.path) as fh:
                self.data = json.load(fh)

    @property
    def stages(self):
        return self.data["stages"]

    def artifact(self, name):
        return self.workspace / name

    def stage(self, name):
        return self.stages.get(name)

    def require(self, stage):
        """Check that ``stage`` is complete, its files exist and its chain is consistent."""
        rec = self.stage(stage)
        if rec is None:
            raise StageError(f"stage '{stage}' has not been run in {self.workspace}")
        for f in rec["artifacts"]:
            if not self.artifact(f).exists():
                raise StageError(f"artifact {f} of stage '{stage}' is missing")
        up = UPSTREAM.get(stage)
        if up is not None:
            up_rec = self.require(up)
            if rec.get("upstream_hash") != up_rec["hash"]:
                raise StageError(f"stage '{stage}' was built from a different '{up}' "
                                 f"(config hash mismatch); re-run '{stage}'")
        return rec

    def check_overwrite(self, stage, cfg_hash, upstream_hash, force):
        """Abort before anything is written if ``stage`` exists with another config."""
        rec = self.stage(stage)
        if rec is None or force:
            return
        if rec["hash"] != cfg_hash or rec.get("upstream_hash") != upstream_hash:
            raise StageError(f"stage '{stage}' already ran with config hash {rec['hash']}; "
                             "pass --force to overwrite it and invalidate later stages")

    def record(self, stage, config, artifacts, upstream_hash=None, **extra):
        rec = {"config": config, "hash": config_hash(config), "upstream_hash": upstream_hash,
               "artifacts": list(artifacts), "complete": True}
        rec.update(extra)
        self.stages[stage] = rec
        self.save()
        return rec

    def save(self):
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
        os.replace(tmp, self.path)


@contextmanager
def workspace_lock(workspace):
    """Advisory lock: one command per workspace at a time."""
    path = Path(workspace) / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(f"workspace {workspace} is locked by another command "
                         f"(remove {path} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _graph_from_manifest(man):
    rec = man.require("ingest")
    return load_graph(man.artifact(GRAPH_FILE), man.artifact(IDS_FILE),
                      rec["config"]["directed"])


def _load_split(man):
    rec = man.require("split")
    return EdgeSplit.load(man.artifact(SPLIT_DIR), seed=rec["config"]["seed"])


def _train_graph(graph, split):
    return graph.with_edges(split.train_pos)


# commands ---------------------------------------------------------------------

def cmd_ingest(args):
    ws = Path(args.out)
    ws.mkdir(parents=True, exist_ok=True)
    man = PipelineManifest(ws)
    src = Path(args.input)
    config = {"input": str(src.resolve()), "directed": bool(args.directed),
              "largest_wcc": not args.keep_all}
    man.check_overwrite("ingest", config_hash(config), None, args.force)
    if src.suffix == ".mat":
        graph = load_mat_network(src)
        if args.directed:
            graph = Graph(graph.out_adj, True)
    else:
        graph = load_edge_list(src, args.directed)
    if not args.keep_all:
        graph = largest_wcc(graph)
    write_edge_list(graph, man.artifact(GRAPH_FILE))
    write_id_map(graph, man.artifact(IDS_FILE))
    stats = f"{graph.num_nodes} {graph.num_edges}"
    man.record("ingest", config, [GRAPH_FILE, IDS_FILE], stats=stats)
    print(stats)


def cmd_split(args):
    man = PipelineManifest(args.workspace)
    up = man.require("ingest")
    config = {"seed": args.seed, "reverse_negatives": not args.no_reverse_negatives}
    man.check_overwrite("split", config_hash(config), up["hash"], args.force)
    graph = _graph_from_manifest(man)
    split = split_edges(graph, seed=args.seed)
    split = sample_negative_edges(graph, split, seed=args.seed + 1)
    if graph.directed and not args.no_reverse_negatives:
        split = extend_directed_test_negatives(graph, split)
    split.save(man.artifact(SPLIT_DIR))
    write_edge_list(_train_graph(graph, split), man.artifact(TRAIN_GRAPH_FILE))
    files = [f"{SPLIT_DIR}/{f}" for f in ("train.pos", "test.pos", "train.neg", "test.neg")]
    man.record("split", config, files + [TRAIN_GRAPH_FILE], up["hash"],
               sizes={k: len(getattr(split, k)) for k in
                      ("train_pos", "test_pos", "train_neg", "test_neg")})
    logger.info("split: %d train / %d test positives", len(split.train_pos), len(split.test_pos))


def walk_config_from_args(args, graph):
    kw = dict(walks_per_node=args.n, walk_length=args.tau, p=args.p, q=args.q, seed=args.seed)
    if args.wl is not None:
        kw["left_window"] = args.wl
    if args.wr is not None:
        kw["right_window"] = args.wr
    return WalkConfig.for_graph(graph, **kw)


def cmd_walk(args):
    man = PipelineManifest(args.workspace)
    up = man.require("split")
    graph = _graph_from_manifest(man)
    train_graph = _train_graph(graph, _load_split(man))
    wcfg = walk_config_from_args(args, graph)
    config = {"walks_per_node": wcfg.walks_per_node, "walk_length": wcfg.walk_length,
              "p": wcfg.p, "q": wcfg.q, "left_window": wcfg.left_window,
              "right_window": wcfg.right_window, "seed": wcfg.seed}
    man.check_overwrite("walk", config_hash(config), up["hash"], args.force)
    artifacts = [COUNTS_FILE]
    if args.save_walks:
        sample_walks(train_graph, wcfg).save(man.artifact(WALKS_FILE))
        artifacts.append(WALKS_FILE)
    counts = count_cooccurrences(train_graph, wcfg)
    counts.save(man.artifact(COUNTS_FILE))
    man.record("walk", config, artifacts, up["hash"], pairs=int(counts.total))
    logger.info("walk: %d distinct pairs, %d total", len(counts), counts.total)


def train_configs_from_args(args):
    kind = EdgeModelKind.parse(args.model)
    tcfg = TrainConfig(learning_rate=args.lr, l2=args.l2, negatives=args.K,
                       batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                       circular=args.circular, optimizer=args.optimizer,
                       pairs_per_epoch=args.pairs_per_epoch)
    if args.neg_per_node < args.K:
        raise ValueError("--neg-per-node must be >= --K")
    return kind, tcfg


def fit_model(graph, split, counts, kind, tcfg, args):
    dims = ModelDims(graph.num_nodes, args.D, args.d1, args.d, args.b, args.h)
    neg = build_negative_sets(graph, split.train_pos, args.neg_per_node, seed=tcfg.seed)
    model = init_params(dims, kind, seed=tcfg.seed, circular=tcfg.circular,
                        dtype=np.dtype(args.dtype))
    return train(counts, neg, model, tcfg, split=split)


def cmd_train(args):
    man = PipelineManifest(args.workspace)
    up = man.require("walk")
    kind, tcfg = train_configs_from_args(args)
    config = {"model": kind.name, "D": args.D, "d1": args.d1, "d": args.d, "b": args.b,
              "h": args.h, "lr": tcfg.learning_rate, "l2": tcfg.l2, "K": tcfg.negatives,
              "epochs": tcfg.epochs, "batch": tcfg.batch_size, "circular": tcfg.circular,
              "optimizer": tcfg.optimizer, "pairs_per_epoch": tcfg.pairs_per_epoch,
              "neg_per_node": args.neg_per_node, "dtype": args.dtype, "seed": tcfg.seed}
    man.check_overwrite("train", config_hash(config), up["hash"], args.force)
    graph = _graph_from_manifest(man)
    split = _load_split(man)
    counts = CooccurrenceCounts.load(man.artifact(COUNTS_FILE))
    result = fit_model(_train_graph(graph, split), split, counts, kind, tcfg, args)
    save_checkpoint(result.model, man.artifact(CKPT_FILE),
                    extra={"best_epoch": result.best_epoch})
    write_stats_csv(result.history, man.artifact(STATS_FILE))
    export_edge_representations(result.model).save_tsv(man.artifact(REPS_FILE),
                                                       raw_ids=graph.raw_ids)
    man.record("train", config, [CKPT_FILE, STATS_FILE, REPS_FILE], up["hash"],
               best_epoch=result.best_epoch, diverged=result.diverged)
    if result.diverged:
        raise DivergedError("training diverged; the last finite checkpoint was saved")


def cmd_eval(args):
    man = PipelineManifest(args.workspace)
    split_rec = man.require("split")
    split = _load_split(man)
    graph = _graph_from_manifest(man)
    train_graph = _train_graph(graph, split)
    extra = {}
    if args.baseline:
        name, dims = args.baseline, 0
        scorer = lambda pairs: BASELINE_SCORERS[name](train_graph, pairs)  # noqa: E731
        upstream = split_rec["hash"]
    else:
        train_rec = man.require("train")
        model = load_checkpoint(man.artifact(CKPT_FILE))
        if args.model and EdgeModelKind.parse(args.model) != model.kind:
            raise StageError(f"checkpoint holds {model.kind.name}, not {args.model}")
        name = model.kind.name
        reps = export_edge_representations(model)
        dims = reps.width()
        scorer = lambda pairs: score_pairs(model, pairs)  # noqa: E731
        extra["norm_std"] = embedding_norm_stats(node_coordinates(model))
        upstream = train_rec["hash"]
    test_auc, train_auc = evaluate_link_prediction(scorer, split)
    report = metrics_report(name, dims, test_auc, train_auc)
    report.update(extra)
    metrics_file, scored_file = f"metrics_{name}.json", f"scored_{name}.tsv"
    write_metrics(man.artifact(metrics_file), report)
    if args.out:
        write_metrics(args.out, report)
    pairs, scores, labels = score_split(scorer, split.test_pos, split.test_neg)
    write_scored_edges(man.artifact(scored_file), pairs, scores, labels)
    man.record(f"eval:{name}", {"target": name}, [metrics_file, scored_file], upstream,
               report=report)
    print(json.dumps(report))


def cmd_run(args):
    """Repeat split/walk/train/eval over ``--repeats`` seeds and report mean and std."""
    man = PipelineManifest(args.workspace)
    man.require("ingest")
    graph = _graph_from_manifest(man)
    kind, tcfg = train_configs_from_args(args) if not args.baseline else (None, None)
    rows = []
    for r in range(args.repeats):
        seed = args.seed + r
        split = split_edges(graph, seed=seed)
        split = sample_negative_edges(graph, split, seed=seed + 1)
        if graph.directed:
            split = extend_directed_test_negatives(graph, split)
        train_graph = _train_graph(graph, split)
        if args.baseline:
            scorer = lambda p, g=train_graph: BASELINE_SCORERS[args.baseline](g, p)  # noqa: E731
            test_auc, train_auc = evaluate_link_prediction(scorer, split)
            rows.append({"seed": seed, "test_auc": test_auc, "train_auc": train_auc})
            continue
        wcfg = walk_config_from_args(args, graph)
        wcfg = dataclasses.replace(wcfg, seed=seed)
        counts = count_cooccurrences(train_graph, wcfg)
        run_cfg = dataclasses.replace(tcfg, seed=seed)
        result = fit_model(train_graph, split, counts, kind, run_cfg, args)
        if result.diverged:
            raise DivergedError(f"training diverged in repeat {r}")
        model = result.model
        test_auc, train_auc = evaluate_link_prediction(lambda p: score_pairs(model, p), split)
        rows.append({"seed": seed, "test_auc": test_auc, "train_auc": train_auc,
                     "norm_std": embedding_norm_stats(node_coordinates(model))})
    summary = summarize_runs(rows)
    summary["target"] = args.baseline or kind.name
    out = Path(args.out) if args.out else man.artifact(f"runs_{summary['target']}.json")
    with open(out, "w") as fh:
        json.dump({"runs": rows, "summary": summary}, fh, indent=2)
    print(json.dumps(summary))


def summarize_runs(rows):
    test = np.array([r["test_auc"] for r in rows])
    train_ = np.array([r["train_auc"] for r in rows])
    out = {"repeats": len(rows), "test_auc_mean": float(test.mean()),
           "test_auc_std": float(test.std()), "train_auc_mean": float(train_.mean()),
           "ratio_mean": float(np.mean(test / train_))}
    if rows and "norm_std" in rows[0]:
        out["norm_std_percentiles"] = norm_std_percentiles([r["norm_std"] for r in rows])
    return out


def position_colors(xy):
    """RGB per point: hue from the angle around the centroid, saturation from the radius."""
    xy = np.asarray(xy, dtype=np.float64)
    c = xy - xy.mean(axis=0)
    radius = np.hypot(c[:, 0], c[:, 1])
    scale = radius.max() if len(radius) and radius.max() > 0 else 1.0
    hue = (np.arctan2(c[:, 1], c[:, 0]) / (2 * np.pi)) % 1.0
    return np.array([colorsys.hsv_to_rgb(h, 0.25 + 0.75 * r / scale, 0.9)
                     for h, r in zip(hue, radius)]).reshape(-1, 3)


def neighbor_average_colors(graph, colors, fallback=(0.5, 0.5, 0.5)):
    """Mean of the out-neighbors' colors; nodes without neighbors get ``fallback``."""
    adj = graph.out_adj.copy()
    adj.data = np.ones_like(adj.data)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    summed = adj @ colors
    out = np.tile(np.asarray(fallback, dtype=np.float64), (graph.num_nodes, 1))
    nz = deg > 0
    out[nz] = summed[nz] / deg[nz, None]
    return out


def plot_document(model, graph, split=None):
    """JSON-ready left/right 2-D coordinates, degrees, colors and edges."""
    if not model.kind.asymmetric:
        raise ValueError("plot export needs an asymmetric model")
    if model.dims.resolved(model.kind).bottleneck != 2 or model.dims.n_projections != 1:
        raise ValueError("plot export needs b=2 and h=1")
    reps = export_edge_representations(model)
    left, right = reps.left[:, 0, :], reps.right[:, 0, :]
    right_colors = position_colors(right)
    plot_graph = graph.with_edges(split.train_pos) if split is not None else graph
    left_colors = neighbor_average_colors(plot_graph, right_colors)
    degree = np.asarray(graph.out_degree())
    nodes = [{"id": str(rid), "left": [float(x) for x in left[i]],
              "right": [float(x) for x in right[i]], "degree": int(degree[i]),
              "left_color": [round(float(c), 4) for c in left_colors[i]],
              "right_color": [round(float(c), 4) for c in right_colors[i]]}
             for i, rid in enumerate(graph.raw_ids)]
    doc = {"model": model.kind.name, "circular": bool(model.circular), "nodes": nodes}
    if split is not None:
        doc["edges"] = {"train": split.train_pos.tolist(), "test": split.test_pos.tolist()}
    else:
        doc["edges"] = {"train": graph.edges().tolist(), "test": []}
    return doc


def cmd_export_plot(args):
    if args.b != 2:
        raise ValueError("export-plot draws 2-D spaces; only --b 2 is supported")
    man = PipelineManifest(args.workspace)
    man.require("train")
    model = load_checkpoint(man.artifact(CKPT_FILE))
    doc = plot_document(model, _graph_from_manifest(man), _load_split(man))
    out = Path(args.out) if args.out else man.artifact("plot.json")
    with open(out, "w") as fh:
        json.dump(doc, fh)
    logger.info("wrote %s", out)


# argument parsing -----------------------------------------------------------

def _add_walk_args(p):
    p.add_argument("--n", type=int, default=80, help="walks per node")
    p.add_argument("--tau", type=int, default=100, help="walk length")
    p.add_argument("--p", type=float, default=1.0, help="return parameter")
    p.add_argument("--q", type=float, default=1.0, help="in-out parameter")
    p.add_argument("--wl", type=int, default=None, help="left window (default by directedness)")
    p.add_argument("--wr", type=int, default=None, help="right window (default by directedness)")


def _add_train_args(p):
    p.add_argument("--model", default="deep_asym",
                   help="shallow_sym, shallow_asym, deep_sym or deep_asym")
    p.add_argument("--D", type=int, default=8, help="embedding width")
    p.add_argument("--d1", type=int, default=0, help="hidden width (0: 2*D)")
    p.add_argument("--d", type=int, default=0, help="manifold width (0: D)")
    p.add_argument("--b", type=int, default=0, help="projection rank (0: d)")
    p.add_argument("--h", type=int, default=1, help="number of projections")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--l2", type=float, default=0.0001)
    p.add_argument("--K", type=int, default=5, help="negatives per positive")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--circular", action="store_true", help="unit-norm left/right vectors")
    p.add_argument("--optimizer", choices=("percentdelta", "adam"), default="percentdelta")
    p.add_argument("--pairs-per-epoch", type=int, default=None,
                   help="draw this many pairs per epoch instead of a full pass")
    p.add_argument("--neg-per-node", type=int, default=100,
                   help="size of each node's non-neighbor pool")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")


def build_parser():
    parser = argparse.ArgumentParser(prog="asymproj",
                                     description="Asymmetric edge embeddings for link prediction")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load an edge list and keep its largest WCC")
    p.add_argument("input", help="edge list (.txt, .gz) or .mat file")
    p.add_argument("--out", required=True, help="workspace directory")
    p.add_argument("--directed", action="store_true")
    p.add_argument("--keep-all", action="store_true", help="skip the largest-WCC filter")
    p.add_argument("--force", action="store_true", help="overwrite an existing ingest")
    p.set_defaults(func=cmd_ingest)

    def ws(p):
        p.add_argument("--workspace", "-w", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--force", action="store_true", help="overwrite a stage with another config")

    p = sub.add_parser("split", help="spanning-tree train/test split and negatives")
    ws(p)
    p.add_argument("--no-reverse-negatives", action="store_true",
                   help="do not add reversed one-way edges to the directed test negatives")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("walk", help="simulate walks and count context pairs")
    ws(p)
    _add_walk_args(p)
    p.add_argument("--save-walks", action="store_true")
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("train", help="train an edge model")
    ws(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score the test split")
    ws(p)
    target = p.add_mutually_exclusive_group()
    target.add_argument("--model", default=None, help="trained model kind (checked)")
    target.add_argument("--baseline", choices=sorted(BASELINE_SCORERS))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="repeated split/walk/train/eval with mean and std")
    ws(p)
    _add_walk_args(p)
    _add_train_args(p)
    p.add_argument("--baseline", choices=sorted(BASELINE_SCORERS), default=None)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("export-plot", help="2-D left/right coordinates as JSON")
    ws(p)
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    try:
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(int(threads)) if threads else None
        ws = Path(args.out if args.command == "ingest" else args.workspace)
        if args.command == "ingest":
            ws.mkdir(parents=True, exist_ok=True)
        elif not ws.is_dir():
            raise StageError(f"workspace {ws} does not exist")
        with workspace_lock(ws):
            args.func(args)
        del limits
    except DivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (EdgeListParseError, StageError, NegativeSamplingError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
