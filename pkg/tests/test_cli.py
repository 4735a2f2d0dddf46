import json

import numpy as np
import pytest

from webgen.checkpoint import load_checkpoint
from webgen.cli import main, parse_obj_lines
from webgen.dataset import load_dataset, load_graph
from webgen.graph import GraphError


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--nodes", 400, "--seed", 3, "--out", d / "web.graph") == 0
    assert run("dataset", "--input", d / "web.graph", "--out", d / "ds.jsonl") == 0
    return d


def test_synth_is_reproducible(pipeline, tmp_path):
    assert run("synth", "--nodes", 400, "--seed", 3, "--out", tmp_path / "b.graph") == 0
    assert (tmp_path / "b.graph").read_bytes() == (pipeline / "web.graph").read_bytes()
    man = json.loads((tmp_path / "b.graph.manifest.json").read_text())
    assert man["seed"] == 3 and man["command"] == "synth" and len(man["config_hash"]) == 64
    assert "numpy" in man["versions"]


def test_dataset_and_stats(pipeline):
    ds = load_dataset(pipeline / "ds.jsonl")
    assert len(ds) > 0 and ds.scaling is not None
    assert run("stats", "--input", pipeline / "web.graph", "--out", pipeline / "f.csv") == 0
    rows = (pipeline / "f.csv").read_text().splitlines()
    assert len(rows) == load_graph(pipeline / "web.graph").n_nodes + 1
    cond = (pipeline / "f.cond.csv").read_text().splitlines()
    assert len(cond[1].split(",")) == 7


def test_train_sample_eval_argen(pipeline):
    ck = pipeline / "ar.ckpt"
    assert run("train", "--model", "argen", "--preset", "desk", "--dataset", pipeline / "ds.jsonl",
               "--steps", 3, "--out", ck) == 0
    assert load_checkpoint(ck, expect_kind="argen").preset == "desk"
    assert run("sample", "--ckpt", ck, "--n", 2, "--out-dir", pipeline / "smp") == 0
    assert len(list((pipeline / "smp").glob("sample_*.graph"))) == 2
    assert run("eval", "--ckpt", ck, "--dataset", pipeline / "ds.jsonl", "--limit", 4,
               "--out", pipeline / "eval.csv") == 0
    lines = (pipeline / "eval.csv").read_text().splitlines()
    assert [ln.split(",")[0] for ln in lines[1:8]] == ["mean_edge_length", "mean_dx", "mean_dy", "mean_dz",
                                                       "node_count", "edge_count", "degree_ratio"]


def test_train_sparse_then_load_as_argen_fails(pipeline, capsys):
    ck = pipeline / "sp.ckpt"
    assert run("train", "--model", "sparse", "--dataset", pipeline / "ds.jsonl", "--steps", 1,
               "--batch", 2, "--out", ck) == 0
    assert load_checkpoint(ck).model_kind == "sparse-diffusion"


def test_assemble_and_mesh(pipeline, tmp_path):
    ds = load_dataset(pipeline / "ds.jsonl")
    from webgen.dataset import save_graph
    save_graph(ds.samples[0].graph, tmp_path / "s.graph")
    assert run("assemble", "--source", tmp_path / "s.graph", "--steps", 3, "--out", tmp_path / "a.graph") == 0
    a = load_graph(tmp_path / "a.graph")
    assert a.n_nodes == 3 * ds.samples[0].graph.n_nodes
    assert run("mesh", "--in", tmp_path / "s.graph", "--res", 30, "--stl", tmp_path / "s.stl") == 1
    assert run("mesh", "--in", tmp_path / "s.graph", "--res", 30, "--radius", 2e-3,
               "--stl", tmp_path / "s.stl") == 0
    data = (tmp_path / "s.stl").read_bytes()
    assert len(data) == 84 + 50 * int.from_bytes(data[80:84], "little") > 84


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nodes": 300, "seed": 5, "out": str(tmp_path / "x.graph")}))
    assert run("synth", "--config", cfg) == 0
    assert run("synth", "--config", cfg, "--seed", 6, "--out", tmp_path / "y.graph") == 0
    assert json.loads((tmp_path / "x.graph.manifest.json").read_text())["seed"] == 5
    assert json.loads((tmp_path / "y.graph.manifest.json").read_text())["seed"] == 6
    assert (tmp_path / "x.graph").read_bytes() != (tmp_path / "y.graph").read_bytes()
    cfg.write_text(json.dumps({"nodez": 3}))
    with pytest.raises(SystemExit):
        run("synth", "--config", cfg)


def test_unknown_flag_and_errors(tmp_path, capsys):
    with pytest.raises(SystemExit):
        run("synth", "--bogus", 1)
    assert run("mesh", "--in", tmp_path / "missing.graph") == 1
    assert "webgen mesh: error" in capsys.readouterr().err


def test_ingest(tmp_path):
    (tmp_path / "w.obj").write_text("# web\nv 0 0 0\nv 0.01 0 0\nv 0 0.01 0\nl 1 2\nl 2 3\nl 3 2\n")
    assert run("ingest", "--input", tmp_path / "w.obj", "--out", tmp_path / "w.graph") == 0
    g = load_graph(tmp_path / "w.graph")
    assert g.n_nodes == 3 and g.edges.tolist() == [[0, 1], [1, 2]]
    with pytest.raises(GraphError):
        parse_obj_lines("v 0 0 0\nl 1 5\n")
    assert np.allclose(g.positions[1], [0.01, 0, 0])
