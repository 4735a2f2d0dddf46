"""Training data from large webs by inductive neighborhood sampling.

Every node of a large web becomes the center of one sample: the subgraph
within ``depth`` hops, capped at ``cap`` nodes, re-indexed in breadth-first
layer order and centered on its centroid.  Features are kept in SI units;
normalization is applied only at model boundaries.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import NEIGH_MAX, Graph, GraphError, induced_subgraph, translate, validate
from .stats import ConditioningVector, EmptyGraphError, conditioning_vector

log = logging.getLogger(__name__)

MAX_NODES = 64
DEFAULT_DEPTH = 4


@dataclass(frozen=True)
class GraphSample:
    graph: Graph
    center: int
    features: ConditioningVector | None = None


@dataclass(frozen=True)
class NormalizationParams:
    coord_scale: float
    feature_min: np.ndarray
    feature_max: np.ndarray

    def __post_init__(self):
        if not self.coord_scale > 0:
            raise ValueError("coord_scale must be positive")
        object.__setattr__(self, "feature_min", np.asarray(self.feature_min, dtype=np.float64))
        object.__setattr__(self, "feature_max", np.asarray(self.feature_max, dtype=np.float64))

    def normalize_features(self, c) -> np.ndarray:
        c = np.asarray(c.as_array() if isinstance(c, ConditioningVector) else c, dtype=np.float64)
        span = self.feature_max - self.feature_min
        ok = span > 0
        safe = np.where(ok, span, 1.0)
        return np.where(ok, 2.0 * (c - self.feature_min) / safe - 1.0, 0.0)

    def denormalize_features(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        span = self.feature_max - self.feature_min
        return np.where(span > 0, (u + 1.0) * span / 2.0 + self.feature_min, self.feature_min)

    def normalize_coords(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) / self.coord_scale

    def denormalize_coords(self, u) -> np.ndarray:
        return np.asarray(u, dtype=np.float64) * self.coord_scale

    def to_dict(self) -> dict:
        return {"coord_scale": self.coord_scale,
                "feature_min": self.feature_min.tolist(),
                "feature_max": self.feature_max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(float(d["coord_scale"]), np.array(d["feature_min"]), np.array(d["feature_max"]))


@dataclass
class Dataset:
    samples: list[GraphSample]
    scaling: NormalizationParams | None = None
    train_ids: list[int] = field(default_factory=list)
    test_ids: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def subset(self, ids) -> list[GraphSample]:
        by_center = {s.center: s for s in self.samples}
        return [by_center[i] for i in ids]

    @property
    def train(self) -> list[GraphSample]:
        return self.subset(self.train_ids)

    @property
    def test(self) -> list[GraphSample]:
        return self.subset(self.test_ids)


def bfs_layers(g: Graph, center: int, depth: int, adj=None) -> list[list[int]]:
    """Hop layers around ``center``; each layer sorted by node id."""
    adj = g.neighbors() if adj is None else adj
    seen = {center}
    layers = [[center]]
    for _ in range(depth):
        nxt = sorted({u for v in layers[-1] for u in adj[v] if u not in seen})
        if not nxt:
            break
        seen.update(nxt)
        layers.append(nxt)
    return layers


def inductive_sample(g: Graph, center: int, depth: int = DEFAULT_DEPTH,
                     cap: int = MAX_NODES, adj=None) -> GraphSample:
    """Centroid-centered induced subgraph of the ``depth``-hop ball around ``center``."""
    if not 0 <= center < g.n_nodes:
        raise IndexError(f"center {center} out of range for {g.n_nodes} nodes")
    order = [v for layer in bfs_layers(g, center, depth, adj) for v in layer][:cap]
    sub = induced_subgraph(g, order)
    sub = translate(sub, -sub.positions.mean(axis=0))
    try:
        feats = conditioning_vector(sub)
    except EmptyGraphError:
        feats = None
    return GraphSample(sub, int(center), feats)


def build_dataset(g: Graph, depth: int = DEFAULT_DEPTH, cap: int = MAX_NODES) -> Dataset:
    """One sample per node of ``g``, ordered by center id.

    Samples without edges have no conditioning vector; they are kept in the
    list but never enter a train/test split.
    """
    adj = g.neighbors()
    samples = [inductive_sample(g, c, depth, cap, adj) for c in range(g.n_nodes)]
    n_bad = sum(s.features is None for s in samples)
    if n_bad:
        log.warning("%d sample(s) have no edges and are excluded from splits", n_bad)
    return Dataset(samples)


def split(ds: Dataset, train_fraction: float = 0.9, seed: int = 0) -> tuple[list[int], list[int]]:
    """Deterministic shuffle of usable centers into ceil(f*n) train / rest test."""
    usable = [s.center for s in ds.samples if s.features is not None]
    if len(usable) < 2:
        raise ValueError("need at least two usable samples to split")
    rng = np.random.default_rng(seed)
    order = [usable[i] for i in rng.permutation(len(usable))]
    n_train = min(math.ceil(round(train_fraction * len(usable), 9)), len(usable) - 1)
    return sorted(order[:n_train]), sorted(order[n_train:])


def fit_normalization(train: list[GraphSample]) -> NormalizationParams:
    if not train:
        raise ValueError("cannot fit normalization on an empty training set")
    scale = max(float(np.max(np.abs(s.graph.positions), initial=0.0)) for s in train)
    feats = np.stack([s.features.as_array() for s in train])
    return NormalizationParams(scale if scale > 0 else 1.0, feats.min(axis=0), feats.max(axis=0))


def prepare(g: Graph, depth: int = DEFAULT_DEPTH, cap: int = MAX_NODES,
            train_fraction: float = 0.9, seed: int = 0) -> Dataset:
    """build_dataset + split + fit_normalization on the training part."""
    ds = build_dataset(g, depth, cap)
    ds.train_ids, ds.test_ids = split(ds, train_fraction, seed)
    ds.scaling = fit_normalization(ds.train)
    return ds


def synthetic_web(node_target: int, spacing: float = 0.01, jitter: float = 0.0,
                  seed: int = 0, keep: tuple[float, float] = (1.0, 1.0)) -> Graph:
    """Jittered 3D lattice web standing in for digitized spider webs.

    Lattice points are taken in row-major order (a connected prefix) and joined
    to their six axis neighbors.  A random spanning tree is always kept; every
    other lattice edge survives with a probability that varies smoothly in
    space between ``keep[0]`` and ``keep[1]``, which gives the local density
    heterogeneity seen in real webs.  ``jitter`` is a fraction of ``spacing``.
    """
    if node_target < 2:
        raise ValueError("node_target must be at least 2")
    rng = np.random.default_rng(seed)
    side = math.ceil(node_target ** (1 / 3))
    nx, ny = side, side
    nz = math.ceil(node_target / (nx * ny))
    idx = np.arange(node_target)
    ijk = np.stack([idx % nx, (idx // nx) % ny, idx // (nx * ny)], axis=1)
    lookup = {tuple(p): i for i, p in enumerate(ijk.tolist())}
    cand = []
    for i, p in enumerate(ijk.tolist()):
        for ax in range(3):
            q = list(p)
            q[ax] += 1
            j = lookup.get(tuple(q))
            if j is not None:
                cand.append((i, j))
    cand = np.array(cand, dtype=np.int64)

    pos = ijk * spacing + rng.uniform(-jitter, jitter, size=(node_target, 3)) * spacing

    # spanning tree by randomized Kruskal
    parent = np.arange(node_target)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = np.zeros(len(cand), dtype=bool)
    for e in rng.permutation(len(cand)):
        ra, rb = find(cand[e, 0]), find(cand[e, 1])
        if ra != rb:
            parent[ra] = rb
            tree[e] = True

    lo, hi = keep
    mid = (ijk[cand[:, 0]] + ijk[cand[:, 1]]) / 2.0 / max(side, 1)
    phase = rng.uniform(0, 2 * np.pi, 3)
    wave = np.prod(np.cos(np.pi * mid + phase), axis=1)
    p_keep = lo + (hi - lo) * (wave + 1.0) / 2.0
    kept = tree | (rng.random(len(cand)) < p_keep)
    g = Graph(pos, cand[kept])
    assert not validate(g, web_conformant=True)
    return g


def save_graph(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=1) + "\n")


def load_graph(path, web_conformant: bool = False) -> Graph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not a graph document: {exc}") from exc
    return Graph.from_dict(doc, web_conformant=web_conformant)


def save_dataset(ds: Dataset, path) -> None:
    """Line-delimited JSON: a header record, then one record per sample."""
    train, test = set(ds.train_ids), set(ds.test_ids)
    with open(path, "w") as fh:
        header = {"type": "header", "max_nodes": MAX_NODES,
                  "normalization": ds.scaling.to_dict() if ds.scaling else None}
        fh.write(json.dumps(header) + "\n")
        for s in ds.samples:
            rec = {"type": "sample", "center": s.center,
                   "split": "train" if s.center in train else "test" if s.center in test else None,
                   "graph": s.graph.to_dict(),
                   "features": None if s.features is None else s.features.as_array().tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"{path}: first record must be the header")
    scaling = NormalizationParams.from_dict(header["normalization"]) if header["normalization"] else None
    ds = Dataset([], scaling)
    for line in lines[1:]:
        rec = json.loads(line)
        feats = None if rec["features"] is None else ConditioningVector.from_array(rec["features"])
        ds.samples.append(GraphSample(Graph.from_dict(rec["graph"]), rec["center"], feats))
        if rec["split"] == "train":
            ds.train_ids.append(rec["center"])
        elif rec["split"] == "test":
            ds.test_ids.append(rec["center"])
    return ds
