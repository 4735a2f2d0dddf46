"""Analog matrix encodings of graph samples.

Two layouts, both with one row per node slot (``N`` rows):

* sparse: ``[x, y, z, n_1 .. n_6]`` where ``n_k`` is the analog code of the
  1-based index of the k-th neighbor (0 = no neighbor);
* full: ``[x, y, z, a_1 .. a_N]`` with ``a_k = +1`` for an edge to node k and
  ``-1`` otherwise.

Coordinates are divided by ``NormalizationParams.coord_scale``.  Unused rows
hold zero coordinates and the "nothing" code (-1) in every connectivity slot.
"""
from __future__ import annotations

import logging

import numpy as np

from .dataset import MAX_NODES, GraphSample, NormalizationParams
from .graph import NEIGH_MAX, Graph, GraphError, validate

log = logging.getLogger(__name__)

START_TOKEN_VALUE = 2.0


class AnalogIndexCodec:
    """Map integer indices 0..N onto [-1, 1] and back."""

    def __init__(self, max_nodes: int = MAX_NODES):
        self.max_nodes = max_nodes

    def encode(self, v) -> np.ndarray:
        return 2.0 * np.asarray(v, dtype=np.float64) / self.max_nodes - 1.0

    def decode(self, a) -> np.ndarray:
        # np.rint rounds half to even
        idx = np.rint((np.asarray(a, dtype=np.float64) + 1.0) * self.max_nodes / 2.0)
        return np.clip(idx, 0, self.max_nodes).astype(np.int64)


def _check(g: Graph, max_nodes: int) -> None:
    if g.n_nodes > max_nodes:
        raise GraphError(f"sample has {g.n_nodes} nodes, more than N = {max_nodes}")
    deg = g.degrees()
    if np.any(deg > NEIGH_MAX):
        raise GraphError(f"node {int(np.argmax(deg))} has degree {deg.max()} > {NEIGH_MAX}")


def _sample_graph(s) -> Graph:
    return s.graph if isinstance(s, GraphSample) else s


def encode_sparse(s, params: NormalizationParams, max_nodes: int = MAX_NODES) -> np.ndarray:
    g = _sample_graph(s)
    _check(g, max_nodes)
    codec = AnalogIndexCodec(max_nodes)
    z = np.zeros((max_nodes, 3 + NEIGH_MAX))
    z[:, 3:] = codec.encode(0)
    n = g.n_nodes
    z[:n, :3] = params.normalize_coords(g.positions)
    for j, nb in enumerate(g.neighbors()):
        z[j, 3:3 + len(nb)] = codec.encode(np.array(nb) + 1)
    return z


def _decoded(edges, coords_rows: np.ndarray, params: NormalizationParams) -> GraphSample:
    """Build a graph from row-index edges, keeping only rows that carry an edge."""
    if not edges:
        return GraphSample(Graph(np.zeros((0, 3))), -1)
    e = np.array(sorted(edges), dtype=np.int64)
    used = np.unique(e)
    remap = np.full(len(coords_rows), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    g = Graph(params.denormalize_coords(coords_rows[used]), remap[e])
    problems = validate(g)
    if problems:  # unreachable by construction, kept as a guard
        raise GraphError("; ".join(problems))
    return GraphSample(g, -1)


def decode_sparse(z, params: NormalizationParams, max_nodes: int = MAX_NODES) -> GraphSample:
    """Decode a (possibly noisy) sparse matrix; an edge exists if either end lists it."""
    z = np.asarray(z, dtype=np.float64)
    idx = AnalogIndexCodec(max_nodes).decode(z[:, 3:])
    edges = set()
    dropped = 0
    for j in range(len(z)):
        for k in idx[j]:
            if k == 0:
                continue
            k = int(k) - 1
            if k == j or k >= len(z):
                dropped += 1
                continue
            edges.add((min(j, k), max(j, k)))
    if dropped:
        log.debug("decode_sparse dropped %d self/out-of-range references", dropped)
    return _decoded(edges, z[:, :3], params)


def encode_full(s, params: NormalizationParams, max_nodes: int = MAX_NODES) -> np.ndarray:
    g = _sample_graph(s)
    if g.n_nodes > max_nodes:
        raise GraphError(f"sample has {g.n_nodes} nodes, more than N = {max_nodes}")
    z = np.full((max_nodes, 3 + max_nodes), -1.0)
    z[:, :3] = 0.0
    z[:g.n_nodes, :3] = params.normalize_coords(g.positions)
    a, b = g.edges[:, 0], g.edges[:, 1]
    z[a, 3 + b] = 1.0
    z[b, 3 + a] = 1.0
    return z


def decode_full(z, params: NormalizationParams) -> GraphSample:
    """Edge (j, k) iff the symmetrized adjacency entry is positive; isolated rows drop."""
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    adj = z[:, 3:3 + n]
    sym = (adj + adj.T) / 2.0
    j, k = np.nonzero(np.triu(sym > 0, k=1))
    return _decoded(list(zip(j.tolist(), k.tolist())), z[:, :3], params)


def prepend_start_token(z) -> np.ndarray:
    z = np.asarray(z)
    token = np.full((1,) + z.shape[1:], START_TOKEN_VALUE, dtype=z.dtype)
    return np.concatenate([token, z], axis=0)


def strip_start_token(z) -> np.ndarray:
    z = np.asarray(z)
    if not np.all(z[0] == START_TOKEN_VALUE):
        raise ValueError("first row is not the start token")
    return z[1:]
