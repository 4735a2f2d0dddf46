"""Command-line pipeline: ingest -> dataset -> train -> sample -> eval -> assemble -> mesh.

Every subcommand accepts ``--config file.json`` whose keys are flag names
(dashes or underscores); flags given on the command line override it.  Each
run writes ``<output>.manifest.json`` with the seed, a hash of the resolved
configuration and library versions.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .argen import ArGenModel
from .assembly import (AssemblyError, CyclicSource, FixedSource, GeneratorSource, Placement,
                       StackPolicy, assemble, random_conditioning)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import (load_dataset, load_graph, prepare, save_dataset, save_graph,
                      synthetic_web)
from .diffusion import DiffusionModel
from .evaluate import evaluate, write_report
from .graph import Graph, GraphError
from .meshing import MeshError, export_stl, mesh_graph
from .stats import FEATURE_NAMES, EmptyGraphError, conditioning_vector, node_fields

log = logging.getLogger("webgen")


# ---------------------------------------------------------------------------
# helpers

def _versions() -> dict:
    import scipy
    import skimage
    return {"webgen": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-image": skimage.__version__, "python": platform.python_version()}


def write_manifest(out: Path, args: argparse.Namespace) -> Path:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    cfg = json.loads(json.dumps(cfg, default=str))
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
    doc = {"command": args.command, "seed": cfg.get("seed"), "config_hash": digest,
           "config": cfg, "versions": _versions()}
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def parse_obj_lines(text: str) -> Graph:
    """Intermediate web format: ``v x y z`` node lines, ``l a b`` 1-based edge lines, ``#`` comments."""
    nodes, edges = [], []
    for ln, raw in enumerate(text.splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v" and len(parts) == 4:
                nodes.append([float(x) for x in parts[1:]])
            elif parts[0] == "l" and len(parts) >= 3:
                idx = [int(x) - 1 for x in parts[1:]]
                edges += [sorted(p) for p in zip(idx[:-1], idx[1:])]
            else:
                raise ValueError(f"unrecognised record {parts[0]!r}")
        except ValueError as exc:
            raise GraphError(f"line {ln}: {exc}") from exc
    e = np.unique(np.array(edges, dtype=np.int64).reshape(-1, 2), axis=0)
    return Graph.from_dict({"nodes": nodes, "edges": e.tolist()})


def _load_samples_source(spec: str):
    p = Path(spec)
    if p.is_dir():
        files = sorted(p.glob("*.graph"))
        if not files:
            raise FileNotFoundError(f"{p}: no *.graph files")
        return CyclicSource([load_graph(f) for f in files]), load_graph(files[0])
    if p.suffix == ".graph" or p.suffix == ".json":
        g = load_graph(p)
        return FixedSource(g), g
    model = load_checkpoint(p)
    src = GeneratorSource(model, model.normalization)
    return src, None


def _new_model(args, normalization):
    if args.model == "argen":
        return ArGenModel(args.preset, seed=args.seed, normalization=normalization)
    return DiffusionModel(args.model, args.preset, seed=args.seed, normalization=normalization)


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args) -> Path:
    g = parse_obj_lines(Path(args.input).read_text())
    save_graph(g, args.out)
    log.info("ingested %d nodes, %d edges", g.n_nodes, g.n_edges)
    return Path(args.out)


def cmd_synth(args) -> Path:
    g = synthetic_web(args.nodes, spacing=args.spacing, jitter=args.jitter, seed=args.seed,
                      keep=(args.keep_lo, args.keep_hi))
    save_graph(g, args.out)
    return Path(args.out)


def cmd_dataset(args) -> Path:
    g = load_graph(args.input)
    ds = prepare(g, depth=args.depth, cap=args.cap, train_fraction=args.split, seed=args.seed)
    save_dataset(ds, args.out)
    log.info("%d samples (%d train / %d test)", len(ds), len(ds.train_ids), len(ds.test_ids))
    return Path(args.out)


def cmd_stats(args) -> Path:
    g = load_graph(args.input)
    fields = node_fields(g, args.source)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", "x", "y", "z"] + [f.name for f in fields])
        for v in range(g.n_nodes):
            w.writerow([v, *map(repr, g.positions[v].tolist()), *(repr(float(f.values[v])) for f in fields)])
    cond_out = args.cond_out or str(Path(args.out).with_suffix("")) + ".cond.csv"
    with open(cond_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_NAMES)
        w.writerow([repr(float(x)) for x in conditioning_vector(g).as_array()])
    return Path(args.out)


def cmd_train(args) -> Path:
    from .training import fit

    ds = load_dataset(args.dataset)
    if ds.scaling is None:
        raise ValueError(f"{args.dataset}: dataset has no normalization header")
    model = _new_model(args, ds.scaling)
    every = max(1, args.steps // 10)
    losses = fit(model, ds.train, args.steps, args.batch, args.lr, args.seed,
                 callback=lambda s, l: log.info("step %d loss %.5f", s, l) if s % every == 0 else None)
    save_checkpoint(model, args.out, extra={"steps": args.steps, "final_loss": losses[-1] if losses else None})
    return Path(args.out)


def cmd_sample(args) -> Path:
    model = load_checkpoint(args.ckpt)
    rng = np.random.default_rng(args.seed)
    conds = np.stack([random_conditioning(model.normalization, rng) for _ in range(args.n)])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(model.sample(conds, rng)):
        save_graph(s.graph, out / f"sample_{i:03d}.graph")
    np.savetxt(out / "conditioning.csv", conds, delimiter=",", header=",".join(FEATURE_NAMES), comments="")
    return out


def cmd_eval(args) -> Path:
    model = load_checkpoint(args.ckpt)
    ds = load_dataset(args.dataset)
    test = ds.test[:args.limit] if args.limit else ds.test
    if not test:
        raise ValueError(f"{args.dataset}: no test samples")
    report = evaluate(model, test, model.normalization, np.random.default_rng(args.seed))
    write_report(report, args.out)
    for name, v in report.rows():
        log.info("R2 %-18s %.3f", name, v)
    return Path(args.out)


def cmd_assemble(args) -> Path:
    source, first = _load_samples_source(args.source)
    if args.path == "helix":
        if args.radius is None and first is None:
            raise ValueError("--radius is required for helix assembly from a model checkpoint")
        p = Placement.helix_for(first, math.radians(args.dphi)) if args.radius is None else \
            Placement("helix", R=args.radius, dphi=math.radians(args.dphi), t=args.pitch)
    elif args.path == "parametric":
        p = Placement("parametric", scale=args.scale)
    else:
        p = Placement("offset", d=tuple(args.offset))
    merge = {"avg": "average", "second": "take_second"}[args.merge]
    policy = StackPolicy(k=args.overlap, merge=merge, shuffle=args.shuffle_seed is not None,
                         seed=args.shuffle_seed or 0)
    result = assemble(source, p, args.steps, policy, seed=args.seed)
    save_graph(result.graph, args.out)
    log.info("assembled %d nodes, %d edges", result.graph.n_nodes, result.graph.n_edges)
    return Path(args.out)


def cmd_mesh(args) -> Path:
    mesh = mesh_graph(load_graph(getattr(args, "in")), args.radius, args.res, args.smooth)
    if mesh.n_triangles == 0:
        raise MeshError(f"no surface extracted; the grid is too coarse for radius {args.radius} "
                        f"(increase --res)")
    export_stl(mesh, args.stl)
    log.info("%d triangles written", mesh.n_triangles)
    return Path(args.stl)


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="webgen", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of flag defaults")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "convert a 'v'/'l' line file to the graph format")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "generate a synthetic lattice web")
    p.add_argument("--nodes", type=int, default=2200)
    p.add_argument("--spacing", type=float, default=0.01)
    p.add_argument("--jitter", type=float, default=0.25)
    p.add_argument("--keep-lo", type=float, default=0.0)
    p.add_argument("--keep-hi", type=float, default=0.5)
    p.add_argument("--out", default="web.graph")

    p = add("dataset", cmd_dataset, "inductive sampling, split and normalization")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--cap", type=int, default=64)
    p.add_argument("--split", type=float, default=0.9)
    p.add_argument("--out", default="dataset.jsonl")

    p = add("stats", cmd_stats, "per-node fields and conditioning vector as CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--source", type=int, default=0, help="geodesic source node")
    p.add_argument("--out", default="fields.csv")
    p.add_argument("--cond-out")

    p = add("train", cmd_train, "train a generator")
    p.add_argument("--model", choices=["sparse", "full", "argen"], required=True)
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--dataset", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", default="model.ckpt")

    p = add("sample", cmd_sample, "draw graphs under random conditioning")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out-dir", default="samples")

    p = add("eval", cmd_eval, "conditioning R^2 on the held-out split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--limit", type=int, default=0, help="evaluate at most this many test samples")
    p.add_argument("--out", default="eval.csv")

    p = add("assemble", cmd_assemble, "stack samples into a large web")
    p.add_argument("--source", required=True, help="graph file, directory of graphs, or checkpoint")
    p.add_argument("--path", choices=["helix", "parametric", "offset"], default="helix")
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--overlap", type=int, default=0)
    p.add_argument("--merge", choices=["avg", "second"], default="avg")
    p.add_argument("--shuffle-seed", type=int)
    p.add_argument("--radius", type=float, help="helix radius (default: 2x sample radius)")
    p.add_argument("--pitch", type=float, default=0.01, help="helix rise per step")
    p.add_argument("--dphi", type=float, default=30.0, help="helix angle per step in degrees")
    p.add_argument("--scale", type=float, default=1.0, help="parametric curve scale")
    p.add_argument("--offset", type=float, nargs=3, default=[0.05, 0.0, 0.0])
    p.add_argument("--out", default="assembled.graph")

    p = add("mesh", cmd_mesh, "capsule SDF + marching cubes -> binary STL")
    p.add_argument("--in", required=True)
    p.add_argument("--radius", type=float, default=4e-4)
    p.add_argument("--res", type=int, default=200)
    p.add_argument("--smooth", type=int, default=2)
    p.add_argument("--stl", default="out.stl")
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv) -> argparse.Namespace:
    argv = sys.argv[1:] if argv is None else list(argv)
    cfg_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif a.startswith("--config="):
            cfg_path = a.split("=", 1)[1]
    choices = ap._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if cfg_path is None or command is None:
        return ap.parse_args(argv)
    cfg = json.loads(Path(cfg_path).read_text())
    sp = choices[command]
    known = {a.dest for a in sp._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known - {"help"})
    if unknown:
        sp.error(f"unknown config keys: {', '.join(unknown)}")
    for a in sp._actions:
        if a.dest in cfg:
            a.required = False
    sp.set_defaults(**cfg)
    return ap.parse_args(argv)


def main(argv=None) -> int:
    ap = build_parser()
    args = _apply_config(ap, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.func(args)
    except (GraphError, EmptyGraphError, CheckpointError, MeshError, AssemblyError,
            ValueError, OSError, KeyError) as exc:
        print(f"webgen {args.command}: error: {exc}", file=sys.stderr)
        return 1
    write_manifest(out, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
