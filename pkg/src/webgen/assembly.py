"""Large webs from many small samples: stacking with overlap and placement paths.

Each step draws a sample, optionally relabels its nodes at random, shifts it
along a placement path and fuses it onto the accumulated graph.  Fusion
identifies the last ``k`` nodes of the previously added block with the first
``k`` nodes of the new sample and takes the union of both edge sets.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormalizationParams
from .graph import NEIGH_MAX, Graph, permute, validate

log = logging.getLogger(__name__)

DOMAIN_END = 12.57  # closed parametric curve is traversed for i*t in [0, 12.57]


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Placement:
    """Per-step offset f_c(i) along a helix, a closed parametric curve or a straight line."""

    kind: str = "helix"
    R: float = 1.0
    dphi: float = math.pi / 6
    t: float = 0.1
    A: float = 2.0
    B: float = 1.5
    t_step: float = 0.05
    n_steps: int = 251
    scale: float = 1.0
    d: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("helix", "parametric", "offset"):
            raise ValueError(f"unknown placement kind {self.kind!r}")

    @classmethod
    def helix_for(cls, g: Graph, dphi: float = math.pi / 6) -> "Placement":
        """Helix sized to a sample: R = 2 r and pitch t = 0.3 r, r the bounding radius."""
        r = bounding_radius(g)
        return cls("helix", R=2.0 * r, dphi=dphi, t=0.3 * r)

    def __call__(self, i) -> np.ndarray:
        return placement_eval(self, i)


def bounding_radius(g: Graph) -> float:
    if g.n_nodes == 0:
        return 0.0
    c = g.positions.mean(axis=0)
    return float(np.max(np.linalg.norm(g.positions - c, axis=1)))


def placement_eval(p: Placement, i) -> np.ndarray:
    if i < 0:
        raise ValueError(f"step index must be non-negative, got {i}")
    if p.kind == "helix":
        a = i * p.dphi
        return np.array([p.R * math.cos(a), p.R * math.sin(a), i * p.t])
    if p.kind == "parametric":
        s = i * p.t_step
        if s > DOMAIN_END:
            raise ValueError(f"i*t = {s:.4f} lies beyond the curve domain end {DOMAIN_END}")
        r = p.A + math.cos(p.B * s)
        return p.scale * np.array([r * math.cos(s), r * math.sin(s), math.sin(p.B * s)])
    return i * np.asarray(p.d, dtype=np.float64)


@dataclass(frozen=True)
class StackPolicy:
    k: int = 0
    merge: str = "average"
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("overlap k must be non-negative")
        if self.merge not in ("average", "take_second"):
            raise ValueError(f"merge must be 'average' or 'take_second', got {self.merge!r}")


def _stack(g_acc: Graph, block: np.ndarray, g_new: Graph, k: int, merge: str, offset):
    """Fuse and return (graph, new-node index map)."""
    if k > len(block) or k > g_new.n_nodes:
        raise ValueError(f"overlap k={k} exceeds block size {len(block)} or sample size {g_new.n_nodes}")
    n_acc = g_acc.n_nodes
    new_pos = g_new.positions + np.asarray(offset, dtype=np.float64).reshape(3)
    idx = np.concatenate([block[len(block) - k:], n_acc + np.arange(g_new.n_nodes - k)]).astype(np.int64)
    pos = np.concatenate([g_acc.positions, new_pos[k:]])
    if k:
        ov = idx[:k]
        pos[ov] = (pos[ov] + new_pos[:k]) / 2.0 if merge == "average" else new_pos[:k]
    e_new = np.sort(idx[g_new.edges], axis=1) if g_new.n_edges else np.zeros((0, 2), np.int64)
    edges = np.unique(np.concatenate([g_acc.edges, e_new]), axis=0)
    return Graph(pos, edges), idx


def stack(g_acc: Graph, g_new: Graph, policy: StackPolicy, offset=(0.0, 0.0, 0.0)) -> Graph:
    """Fuse ``g_new`` (shifted by ``offset``) onto ``g_acc``, treating all of ``g_acc`` as the last block."""
    return _stack(g_acc, np.arange(g_acc.n_nodes), g_new, policy.k, policy.merge, offset)[0]


def repair(g: Graph, max_degree: int = NEIGH_MAX) -> Graph:
    """Drop the longest edges at nodes above the degree cap."""
    if g.n_edges == 0 or g.degrees().max() <= max_degree:
        return g
    keep = np.ones(g.n_edges, dtype=bool)
    deg = g.degrees().copy()
    for e in np.argsort(-g.edge_lengths(), kind="stable"):
        a, b = g.edges[e]
        if deg[a] > max_degree or deg[b] > max_degree:
            keep[e] = False
            deg[a] -= 1
            deg[b] -= 1
    return Graph(g.positions, g.edges[keep])


class FixedSource:
    def __init__(self, g: Graph):
        self.g = g

    def draw(self, step: int, rng) -> Graph:
        return self.g


class CyclicSource:
    def __init__(self, graphs):
        self.graphs = list(graphs)
        if not self.graphs:
            raise ValueError("cyclic source needs at least one graph")

    def draw(self, step: int, rng) -> Graph:
        return self.graphs[step % len(self.graphs)]


class GeneratorSource:
    """Draw samples from a generative model under random conditioning.

    ``model.sample(conds, rng)`` must return decoded GraphSamples.  Samples
    above the degree cap are repaired; empty samples are redrawn up to
    ``retries`` times.
    """

    def __init__(self, model, scaling: NormalizationParams, retries: int = 5):
        self.model, self.scaling, self.retries = model, scaling, retries

    def draw(self, step: int, rng) -> Graph:
        tried = []
        for _ in range(self.retries + 1):
            c = random_conditioning(self.scaling, rng)
            g = repair(self.model.sample(c[None], rng)[0].graph)
            problems = validate(g, web_conformant=True)
            if g.n_edges and not problems:
                return g
            tried.append(f"{g.n_nodes} nodes/{g.n_edges} edges" + (f" ({problems[0]})" if problems else ""))
        raise AssemblyError(f"step {step}: no valid sample after {self.retries + 1} draws: " + "; ".join(tried))


def random_conditioning(scaling: NormalizationParams, rng, max_tries: int = 1000) -> np.ndarray:
    """Uniform normalized conditioning vector with integer counts and consistent ratio.

    Node and edge counts are rounded to integers in SI space and the ratio is
    recomputed from them; draws whose ratio falls outside the training range
    are rejected.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    for _ in range(max_tries):
        c = scaling.denormalize_features(rng.uniform(-1.0, 1.0, 7))
        c[4] = max(1.0, round(c[4]))
        c[5] = max(1.0, round(c[5]))
        c[6] = c[5] / c[4]
        u = scaling.normalize_features(c)
        if np.all(np.abs(u) <= 1.0):
            return u
    log.warning("random_conditioning: ratio rejection exhausted, clipping")
    return np.clip(u, -1.0, 1.0)


@dataclass
class Assembly:
    graph: Graph
    provenance: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def assemble(source, placement: Placement, n_steps: int, policy: StackPolicy = StackPolicy(),
             seed: int = 0) -> Assembly:
    """Stack ``n_steps`` samples along ``placement``; provenance[v] is the step that created node v."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    rng = np.random.default_rng(seed)
    shuffle_rng = np.random.default_rng(policy.seed)
    acc = Graph(np.zeros((0, 3)))
    block = np.zeros(0, dtype=np.int64)
    prov: list[int] = []
    for i in range(n_steps):
        g = source.draw(i, rng)
        if policy.shuffle:
            g = permute(g, shuffle_rng.permutation(g.n_nodes))
        k = min(policy.k, len(block), g.n_nodes)
        if k < policy.k and i > 0:
            log.warning("step %d: overlap reduced from %d to %d by sample size", i, policy.k, k)
        n_before = acc.n_nodes
        acc, block = _stack(acc, block, g, k, policy.merge, placement_eval(placement, i))
        prov += [i] * (acc.n_nodes - n_before)
    problems = validate(acc)
    if problems:
        raise AssemblyError("assembled graph is invalid: " + "; ".join(problems[:5]))
    return Assembly(acc, np.array(prov, dtype=np.int64))
