"""Undirected 3D graphs: the shared substrate for statistics, models and assembly.

Positions are stored as an ``(n, 3)`` float array in meters, edges as an
``(m, 2)`` integer array in canonical form (``a < b`` within each pair, rows
sorted lexicographically).  Arrays are made read-only on construction so a
``Graph`` can be shared freely.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEIGH_MAX = 6


class GraphError(ValueError):
    """Raised when a graph document or operation violates graph invariants."""


def _canonical_edges(edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.sort(e, axis=1)
    order = np.lexsort((e[:, 1], e[:, 0]))
    return e[order]


@dataclass(frozen=True, eq=False)
class Graph:
    positions: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        e = _canonical_edges(self.edges)
        pos.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "edges", e)

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)[: self.n_nodes]

    def neighbors(self) -> list[list[int]]:
        """Adjacency lists with neighbors in ascending order."""
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            adj[a].append(int(b))
            adj[b].append(int(a))
        for lst in adj:
            lst.sort()
        return adj

    def edge_vectors(self) -> np.ndarray:
        return self.positions[self.edges[:, 1]] - self.positions[self.edges[:, 0]]

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(), axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.positions.shape == other.positions.shape
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.edges, other.edges)
        )

    def __repr__(self) -> str:
        return f"Graph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"

    def to_dict(self) -> dict:
        return {
            "nodes": [[float(c) for c in p] for p in self.positions],
            "edges": [[int(a), int(b)] for a, b in self.edges],
        }

    @classmethod
    def from_dict(cls, doc: dict, web_conformant: bool = False) -> "Graph":
        """Parse a graph document, rejecting anything ``validate`` complains about."""
        try:
            nodes = np.asarray(doc["nodes"], dtype=np.float64)
            edges = np.asarray(doc["edges"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph document: {exc}") from exc
        if nodes.size == 0:
            nodes = nodes.reshape(0, 3)
        if edges.size == 0:
            edges = edges.reshape(0, 2)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise GraphError(f"nodes must be an array of [x, y, z], got shape {nodes.shape}")
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise GraphError(f"edges must be an array of [a, b], got shape {edges.shape}")
        g = cls(nodes, edges)
        problems = validate(g, web_conformant=web_conformant)
        if problems:
            raise GraphError("; ".join(problems))
        return g


def validate(g: Graph, web_conformant: bool = False) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    n = g.n_nodes
    if not np.all(np.isfinite(g.positions)):
        bad = np.flatnonzero(~np.all(np.isfinite(g.positions), axis=1))
        problems += [f"non-finite position at {int(v)}" for v in bad]
    for a, b in g.edges:
        if a < 0 or b >= n:
            problems.append(f"edge ({a},{b}) index out of range for {n} nodes")
        elif a == b:
            problems.append(f"self-loop at {a}")
    if len(g.edges) > 1:
        dup = np.all(g.edges[1:] == g.edges[:-1], axis=1)
        for a, b in g.edges[1:][dup]:
            problems.append(f"duplicate edge ({a},{b})")
    if web_conformant and not problems:
        deg = g.degrees()
        for v in np.flatnonzero(deg > NEIGH_MAX):
            problems.append(f"degree {deg[v]} > {NEIGH_MAX} at {int(v)}")
    return problems


def degree(g: Graph, v: int) -> int:
    if not 0 <= v < g.n_nodes:
        raise IndexError(f"node {v} out of range for {g.n_nodes} nodes")
    return int(np.count_nonzero(g.edges == v))


def permute(g: Graph, p) -> Graph:
    """Relabel node ``a`` as ``p[a]``; positions and adjacency move together."""
    p = np.asarray(p, dtype=np.int64)
    n = g.n_nodes
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise GraphError(f"permutation must be a bijection on {n} indices")
    pos = np.empty_like(g.positions)
    pos[p] = g.positions
    return Graph(pos, p[g.edges])


def inverse_permutation(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.int64)
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


def translate(g: Graph, d) -> Graph:
    d = np.asarray(d, dtype=np.float64).reshape(3)
    return Graph(g.positions + d, g.edges)


def induced_subgraph(g: Graph, nodes) -> Graph:
    """Subgraph on ``nodes``, re-indexed in the given order."""
    nodes = np.asarray(nodes, dtype=np.int64)
    remap = np.full(g.n_nodes, -1, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    e = remap[g.edges]
    keep = np.all(e >= 0, axis=1)
    return Graph(g.positions[nodes], e[keep])


def connected_components(g: Graph) -> np.ndarray:
    """Component label per node (labels ordered by smallest member)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components as cc

    n = g.n_nodes
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    a = coo_matrix((np.ones(g.n_edges), (g.edges[:, 0], g.edges[:, 1])), shape=(n, n))
    _, labels = cc(a, directed=False)
    return labels.astype(np.int64)
