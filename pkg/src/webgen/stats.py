"""Per-graph conditioning features and per-node heterogeneity fields.

The conditioning vector holds seven numbers: mean edge length, mean absolute
x/y/z edge components, node count, edge count and the edge-to-node ratio.
Node fields project local statistics onto nodes so that spatial variation in
a web can be inspected or exported.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, fields

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .graph import Graph

log = logging.getLogger(__name__)

FEATURE_NAMES = ("mean_edge_length", "mean_dx", "mean_dy", "mean_dz",
                 "node_count", "edge_count", "degree_ratio")


class EmptyGraphError(ValueError):
    """Raised when a statistic is undefined because the graph has no nodes or edges."""


@dataclass(frozen=True)
class ConditioningVector:
    mean_edge_length: float
    mean_dx: float
    mean_dy: float
    mean_dz: float
    node_count: int
    edge_count: int
    degree_ratio: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "ConditioningVector":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (7,):
            raise ValueError(f"conditioning vector needs 7 entries, got shape {a.shape}")
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]),
                   int(round(a[4])), int(round(a[5])), float(a[6]))


@dataclass(frozen=True)
class NodeField:
    name: str
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def conditioning_vector(g: Graph) -> ConditioningVector:
    if g.n_nodes == 0 or g.n_edges == 0:
        raise EmptyGraphError("conditioning vector needs at least one node and one edge")
    d = np.abs(g.edge_vectors())
    lengths = np.sqrt(np.sum(d * d, axis=1))
    ne, nn = g.n_edges, g.n_nodes
    mean_d = d.mean(axis=0)
    return ConditioningVector(float(lengths.mean()), float(mean_d[0]), float(mean_d[1]),
                              float(mean_d[2]), nn, ne, ne / nn)


def _incident_sums(g: Graph, per_edge: np.ndarray) -> np.ndarray:
    out = np.zeros(g.n_nodes)
    # fixed accumulation order: edges in canonical order, first endpoint then second
    np.add.at(out, g.edges[:, 0], per_edge)
    np.add.at(out, g.edges[:, 1], per_edge)
    return out


def per_node_mean_edge_length(g: Graph) -> NodeField:
    deg = g.degrees()
    total = _incident_sums(g, g.edge_lengths())
    if np.any(deg == 0):
        log.warning("%d isolated node(s) get mean edge length 0", int(np.sum(deg == 0)))
    vals = np.divide(total, deg, out=np.zeros_like(total), where=deg > 0)
    return NodeField("mean_edge_length", vals)


def clustering_coefficient(g: Graph) -> NodeField:
    n = g.n_nodes
    adj = [set(lst) for lst in g.neighbors()]
    vals = np.zeros(n)
    for v in range(n):
        k = len(adj[v])
        if k < 2:
            continue
        nb = sorted(adj[v])
        tri = sum(1 for i, a in enumerate(nb) for b in nb[i + 1:] if b in adj[a])
        vals[v] = 2.0 * tri / (k * (k - 1))
    return NodeField("clustering", vals)


def reciprocal_neighbor_density(g: Graph) -> NodeField:
    """Mean distance to neighbors divided by neighbor count; small means dense."""
    deg = g.degrees().astype(np.float64)
    total = _incident_sums(g, g.edge_lengths())
    vals = np.divide(total, deg * deg, out=np.zeros_like(total), where=deg > 0)
    return NodeField("reciprocal_density", vals)


def geodesic_field(g: Graph, source: int) -> NodeField:
    """Euclidean-weighted shortest-path distance from ``source`` (inf if unreachable)."""
    n = g.n_nodes
    if not 0 <= source < n:
        raise IndexError(f"source {source} out of range for {n} nodes")
    adj = g.neighbors()
    pos = g.positions
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for u in adj[v]:
            nd = d + float(np.linalg.norm(pos[u] - pos[v]))
            if nd < dist[u]:
                dist[u] = nd
                heapq.heappush(heap, (nd, u))
    return NodeField("geodesic", dist)


def laplacian(g: Graph) -> np.ndarray:
    n = g.n_nodes
    a = np.zeros((n, n))
    a[g.edges[:, 0], g.edges[:, 1]] = 1.0
    a[g.edges[:, 1], g.edges[:, 0]] = 1.0
    return np.diag(a.sum(axis=1)) - a


def fiedler_pair(g: Graph, tol: float = 1e-8, max_iter: int = 10_000,
                 seed: int = 0) -> tuple[float, np.ndarray]:
    """Second-smallest Laplacian eigenpair by inverse iteration.

    The constant null vector is deflated by factoring ``L + J/n`` (``J`` the
    all-ones matrix), which is positive definite for connected graphs and has
    the same spectrum as ``L`` on the complement of the constants.
    """
    n = g.n_nodes
    if n < 2:
        raise EmptyGraphError("Fiedler vector needs at least two nodes")
    from .graph import connected_components

    if connected_components(g).max() > 0:
        raise ValueError("graph is disconnected: second Laplacian eigenvalue is 0 (degenerate)")
    lap = laplacian(g)
    factor = cho_factor(lap + np.full((n, n), 1.0 / n))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    lam = 0.0
    for _ in range(max_iter):
        v -= v.mean()
        v /= np.linalg.norm(v)
        lv = lap @ v
        lam = float(v @ lv)
        if np.linalg.norm(lv - lam * v) <= tol:
            break
        v = cho_solve(factor, v)
    else:
        raise RuntimeError(f"inverse iteration did not converge in {max_iter} iterations")
    # sign convention: first clearly nonzero entry positive (entries are accurate to ~tol)
    nz = np.flatnonzero(np.abs(v) > 1e-6)
    if len(nz) and v[nz[0]] < 0:
        v = -v
    return lam, v


def fiedler_projection(g: Graph) -> NodeField:
    _, v = fiedler_pair(g)
    return NodeField("fiedler", v)


def node_fields(g: Graph, source: int = 0) -> list[NodeField]:
    """All per-node fields; the Fiedler field is NaN-filled for disconnected graphs."""
    out = [per_node_mean_edge_length(g), clustering_coefficient(g),
           reciprocal_neighbor_density(g)]
    out.append(geodesic_field(g, source) if g.n_nodes else NodeField("geodesic", np.zeros(0)))
    try:
        out.append(fiedler_projection(g))
    except (ValueError, RuntimeError) as exc:
        log.warning("fiedler field unavailable: %s", exc)
        out.append(NodeField("fiedler", np.full(g.n_nodes, np.nan)))
    return out
