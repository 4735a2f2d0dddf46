"""
Statistics of a synthetic web
=============================

Build a jittered lattice web, then look at the seven-number conditioning
vector and the per-node fields used to describe local heterogeneity.
"""
import numpy as np

from webgen.dataset import synthetic_web
from webgen.graph import connected_components, induced_subgraph
from webgen.stats import FEATURE_NAMES, conditioning_vector, fiedler_pair, node_fields

# a few hundred nodes on a 1 cm lattice, about a third of the edges kept
g = synthetic_web(600, spacing=0.01, jitter=0.25, seed=4, keep=(0.0, 0.5))
print(f"{g.n_nodes} nodes, {g.n_edges} edges, {connected_components(g).max() + 1} components")

# the conditioning vector: edge geometry, counts, and edge/node ratio
c = conditioning_vector(g)
for name, value in zip(FEATURE_NAMES, c.as_array()):
    print(f"  {name:18s} {value:.5g}")

# per-node fields, with geodesics measured from node 0 (a cubic lattice has no
# triangles, so its clustering field is zero everywhere)
fields = node_fields(g, source=0)
for f in fields:
    v = f.values[np.isfinite(f.values)]
    print(f"{f.name:28s} min {v.min():.4g}  median {np.median(v):.4g}  max {v.max():.4g}")

# the Fiedler vector of the largest component splits it into two halves
comp = connected_components(g)
keep = np.flatnonzero(comp == np.bincount(comp).argmax())
sub = induced_subgraph(g, keep)
lam, v = fiedler_pair(sub)
side = v > 0
print(f"algebraic connectivity {lam:.4g}; partition sizes {side.sum()} / {(~side).sum()}")
gap = np.abs(sub.positions[side].mean(axis=0) - sub.positions[~side].mean(axis=0))
print("distance between the halves' centroids along x, y, z:", np.round(gap, 4))
