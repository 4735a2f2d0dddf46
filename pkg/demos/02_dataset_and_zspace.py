"""
From a web to training matrices
===============================

Inductive sampling cuts a large web into small 4-hop neighborhoods.  Each
sample is then written in the two matrix forms the generators use: neighbor
lists (sparse) and a full adjacency block.
"""
import numpy as np

from webgen import zspace
from webgen.dataset import prepare, synthetic_web

g = synthetic_web(800, spacing=0.01, jitter=0.25, seed=2, keep=(0.0, 0.5))
ds = prepare(g, seed=0)
sizes = np.array([s.graph.n_nodes for s in ds.samples])
print(f"{len(ds)} samples, {len(ds.train_ids)} train / {len(ds.test_ids)} test")
print(f"nodes per sample: min {sizes.min()}, mean {sizes.mean():.1f}, max {sizes.max()}")

p = ds.scaling
print("coordinate scale", p.coord_scale)
s = ds.train[0]
print("features (normalized):", np.round(p.normalize_features(s.features), 3))

# sparse form: 3 coordinates + 6 neighbor slots holding analog indices
zs = zspace.encode_sparse(s, p)
print("sparse z", zs.shape, "first row", np.round(zs[0], 3))

# full form: 3 coordinates + one adjacency column per node
zf = zspace.encode_full(s, p)
print("full z", zf.shape, "edges in upper triangle", int((np.triu(zf[:, 3:], 1) > 0).sum()))

# both decode back to the same graph
for name, back in (("sparse", zspace.decode_sparse(zs, p)), ("full", zspace.decode_full(zf, p))):
    same = np.array_equal(back.graph.edges, s.graph.edges)
    err = np.abs(back.graph.positions - s.graph.positions).max()
    print(f"{name}: edges identical {same}, max position error {err:.2e} m")

# the autoregressive model reads rows after a constant start token
tok = zspace.prepend_start_token(zf)
print("with start token", tok.shape, "token value", tok[0, 0])
