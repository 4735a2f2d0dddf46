"""
Autoregressive transformer and conditioning fidelity
====================================================

Train the desk transformer on the training split and ask it to generate one
graph per held-out feature vector.  R^2 between requested and measured
features says how well the conditioning is followed.  Pass a step count on
the command line for a longer run (the default is short).
"""
import sys
import time

from webgen.dataset import prepare, synthetic_web
from webgen.argen import ArGenModel
from webgen.evaluate import evaluate
from webgen.training import fit

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 6000

g = synthetic_web(2200, spacing=0.01, jitter=0.25, seed=1, keep=(0.0, 0.5))
ds = prepare(g, seed=0)
m = ArGenModel("desk", seed=0, normalization=ds.scaling)
print(f"{len(ds.train)} training samples, {m.net.n_parameters()} parameters")

t0 = time.time()
fit(m, ds.train, steps, batch_size=32, seed=0,
    callback=lambda s, loss: print(f"step {s:5d} loss {loss:.4f}") if s % 500 == 0 else None)
print(f"trained {steps} steps in {(time.time() - t0) / 60:.1f} min")

rep = evaluate(m, ds.test, ds.scaling)
for name, r2 in rep.rows():
    print(f"R2 {name:18s} {r2:7.3f}")
print(f"{rep.n_used} graphs scored, {rep.n_empty} empty")
