import json
import warnings

import numpy as np
import pytest

from asymproj.cli import (EXIT_DIVERGED, EXIT_INVALID, EXIT_IO, EXIT_OK, PipelineManifest,
                          main, neighbor_average_colors, position_colors)
from asymproj.graph import Graph
from asymproj.model import EdgeRepresentation

from conftest import community_digraph, random_graph

FAST_WALK = ["--n", "3", "--tau", "20"]
FAST_TRAIN = ["--epochs", "2", "--batch", "128", "--lr", "0.1", "--neg-per-node", "20"]


def write_graph(path, g):
    with open(path, "w") as fh:
        fh.write("# test graph\n")
        for u, v in g.edges():
            fh.write(f"n{u} n{v}\n")
    return path


def pipeline(tmp_path, name="ws", directed=True, train_args=(), g=None):
    g = g if g is not None else (community_digraph(n=80, groups=4, out=4, seed=0) if directed
                                 else random_graph(80, 240, False, seed=0))
    src = write_graph(tmp_path / f"{name}.txt", g)
    ws = tmp_path / name
    flag = ["--directed"] if directed else []
    assert main(["ingest", str(src), "--out", str(ws)] + flag) == EXIT_OK
    assert main(["split", "-w", str(ws), "--seed", "1"]) == EXIT_OK
    assert main(["walk", "-w", str(ws)] + FAST_WALK) == EXIT_OK
    assert main(["train", "-w", str(ws)] + FAST_TRAIN + list(train_args)) == EXIT_OK
    return ws


def test_ingest_stats_line(tmp_path, capsys):
    g = random_graph(30, 70, True, seed=1)
    src = write_graph(tmp_path / "g.txt", g)
    assert main(["ingest", str(src), "--out", str(tmp_path / "ws"), "--directed"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "30 70"
    assert PipelineManifest(tmp_path / "ws").stage("ingest")["stats"] == "30 70"


@pytest.mark.parametrize("text", ["", "# only comments\n# here\n"])
def test_ingest_no_edges(tmp_path, capsys, text):
    (tmp_path / "e.txt").write_text(text)
    assert main(["ingest", str(tmp_path / "e.txt"), "--out", str(tmp_path / "ws")]) == EXIT_INVALID
    assert "no edges" in capsys.readouterr().err


def test_ingest_parse_error_location(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("1 2\n1\n")
    assert main(["ingest", str(tmp_path / "bad.txt"), "--out", str(tmp_path / "ws")]) == \
        EXIT_INVALID
    assert "bad.txt:2" in capsys.readouterr().err


def test_missing_input_is_io_error(tmp_path):
    assert main(["ingest", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "ws")]) == EXIT_IO


@pytest.mark.parametrize("directed,windows", [(True, (0, 2)), (False, (2, 2))])
def test_window_defaults(tmp_path, directed, windows):
    g = random_graph(30, 80, directed, seed=2)
    src = write_graph(tmp_path / "g.txt", g)
    ws = tmp_path / "ws"
    main(["ingest", str(src), "--out", str(ws)] + (["--directed"] if directed else []))
    main(["split", "-w", str(ws)])
    assert main(["walk", "-w", str(ws)] + FAST_WALK) == EXIT_OK
    cfg = PipelineManifest(ws).stage("walk")["config"]
    assert (cfg["left_window"], cfg["right_window"]) == windows


def test_stage_order_enforced(tmp_path):
    g = random_graph(30, 80, True, seed=2)
    src = write_graph(tmp_path / "g.txt", g)
    ws = tmp_path / "ws"
    main(["ingest", str(src), "--out", str(ws), "--directed"])
    assert main(["walk", "-w", str(ws)]) == EXIT_INVALID
    assert main(["train", "-w", str(ws)]) == EXIT_INVALID
    assert main(["eval", "-w", str(ws), "--baseline", "aa"]) == EXIT_INVALID
    assert main(["split", "-w", str(tmp_path / "elsewhere")]) == EXIT_INVALID


def test_unknown_model(tmp_path):
    ws = tmp_path / "ws"
    g = random_graph(30, 80, True, seed=2)
    main(["ingest", str(write_graph(tmp_path / "g.txt", g)), "--out", str(ws), "--directed"])
    main(["split", "-w", str(ws)])
    main(["walk", "-w", str(ws)] + FAST_WALK)
    assert main(["train", "-w", str(ws), "--model", "deep_diag"]) == EXIT_INVALID


def test_full_pipeline_and_eval(tmp_path, capsys):
    ws = pipeline(tmp_path, train_args=["--model", "deep_asym", "--b", "4"])
    capsys.readouterr()
    assert main(["eval", "-w", str(ws), "--model", "deep_asym"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["model"] == "deep_asym" and report["dims"] == 8
    assert np.isclose(report["ratio"], report["test_auc"] / report["train_auc"])
    left, right = EdgeRepresentation.load_tsv(ws / "reps.tsv")
    assert left.shape[1] + right.shape[1] == 8
    assert main(["eval", "-w", str(ws), "--baseline", "jaccard"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["model"] == "jaccard"
    assert (ws / "scored_jaccard.tsv").exists() and (ws / "metrics_deep_asym.json").exists()
    assert main(["eval", "-w", str(ws), "--model", "shallow_sym"]) == EXIT_INVALID


def test_config_mismatch_aborts_without_writing(tmp_path):
    ws = pipeline(tmp_path)
    before = {p.name: p.read_bytes() for p in (ws / "split").iterdir()}
    manifest = (ws / "manifest.json").read_bytes()
    assert main(["split", "-w", str(ws), "--seed", "99"]) == EXIT_INVALID
    assert {p.name: p.read_bytes() for p in (ws / "split").iterdir()} == before
    assert (ws / "manifest.json").read_bytes() == manifest


def test_forced_rerun_invalidates_downstream(tmp_path):
    ws = pipeline(tmp_path)
    assert main(["split", "-w", str(ws), "--seed", "99", "--force"]) == EXIT_OK
    assert main(["train", "-w", str(ws)] + FAST_TRAIN) == EXIT_INVALID
    assert main(["eval", "-w", str(ws)]) == EXIT_INVALID
    assert main(["walk", "-w", str(ws), "--force"] + FAST_WALK) == EXIT_OK
    assert main(["train", "-w", str(ws), "--force"] + FAST_TRAIN) == EXIT_OK
    assert main(["eval", "-w", str(ws)]) == EXIT_OK


def test_missing_artifact_detected(tmp_path):
    ws = pipeline(tmp_path)
    (ws / "counts.tsv").unlink()
    assert main(["train", "-w", str(ws), "--force"] + FAST_TRAIN) == EXIT_INVALID


def test_lock_file_blocks(tmp_path):
    ws = pipeline(tmp_path)
    (ws / ".lock").write_text("123")
    assert main(["eval", "-w", str(ws)]) == EXIT_INVALID
    (ws / ".lock").unlink()
    assert main(["eval", "-w", str(ws)]) == EXIT_OK
    assert not (ws / ".lock").exists()


def test_bit_reproducible(tmp_path):
    a = pipeline(tmp_path, "a")
    b = pipeline(tmp_path, "b", g=community_digraph(n=80, groups=4, out=4, seed=0))
    for f in ("graph.tsv", "ids.tsv", "split/train.pos", "split/test.neg", "counts.tsv",
              "model.ckpt", "stats.csv", "reps.tsv"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_divergence_exit_code(tmp_path):
    ws = pipeline(tmp_path)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = main(["train", "-w", str(ws), "--force", "--model", "shallow_asym", "--lr",
                     "1e200", "--optimizer", "adam", "--epochs", "3"])
    assert code == EXIT_DIVERGED
    assert PipelineManifest(ws).stage("train")["diverged"]


def test_run_repeats(tmp_path, capsys):
    ws = pipeline(tmp_path, directed=False)
    capsys.readouterr()
    assert main(["run", "-w", str(ws), "--baseline", "aa", "--repeats", "2"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["repeats"] == 2 and summary["target"] == "aa"
    assert main(["run", "-w", str(ws), "--repeats", "2", "--model", "shallow_asym"]
                + FAST_WALK + FAST_TRAIN) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert len(summary["norm_std_percentiles"]) == 3
    assert "test_auc_std" in summary


def test_export_plot_two_nodes(tmp_path):
    g = Graph.from_edges([[0, 1]], 2, directed=True)
    src = write_graph(tmp_path / "g.txt", g)
    ws = tmp_path / "ws"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["ingest", str(src), "--out", str(ws), "--directed"]) == EXIT_OK
        assert main(["split", "-w", str(ws)]) == EXIT_OK
        assert main(["walk", "-w", str(ws)] + FAST_WALK) == EXIT_OK
        assert main(["train", "-w", str(ws), "--D", "2", "--b", "2", "--neg-per-node", "5",
                     "--epochs", "2", "--batch", "8"]) == EXIT_OK
    assert main(["export-plot", "-w", str(ws)]) == EXIT_OK
    doc = json.loads((ws / "plot.json").read_text())
    assert len(doc["nodes"]) == 2
    for node in doc["nodes"]:
        assert len(node["left"]) == 2 and len(node["right"]) == 2
        assert len(node["left_color"]) == 3
    assert set(doc["edges"]) == {"train", "test"}


def test_export_plot_circular_unit_norm(tmp_path):
    ws = pipeline(tmp_path, train_args=["--b", "2", "--circular"])
    assert main(["export-plot", "-w", str(ws), "--out", str(tmp_path / "p.json")]) == EXIT_OK
    doc = json.loads((tmp_path / "p.json").read_text())
    for node in doc["nodes"]:
        assert abs(np.linalg.norm(node["left"]) - 1) < 1e-6
        assert abs(np.linalg.norm(node["right"]) - 1) < 1e-6


def test_export_plot_requires_b2(tmp_path):
    ws = pipeline(tmp_path, train_args=["--b", "4"])
    assert main(["export-plot", "-w", str(ws)]) == EXIT_INVALID
    assert main(["export-plot", "-w", str(ws), "--b", "3"]) == EXIT_INVALID


def test_plot_colors():
    xy = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    c = position_colors(xy)
    assert c.shape == (3, 3) and np.all((c >= 0) & (c <= 1))
    g = Graph.from_edges([[0, 1], [0, 2]], 3, directed=True)
    left = neighbor_average_colors(g, c)
    assert np.allclose(left[0], (c[1] + c[2]) / 2)
    assert np.allclose(left[1], 0.5)
