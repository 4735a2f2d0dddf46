import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from webgen.graph import Graph


def random_graph(rng, n, p=0.4, max_degree=None, scale=1.0):
    """Erdos-Renyi graph with uniform positions; optionally degree-capped."""
    pos = rng.uniform(-scale, scale, size=(n, 3))
    cand = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    if max_degree is not None:
        deg = np.zeros(n, int)
        kept = []
        for a, b in cand:
            if deg[a] < max_degree and deg[b] < max_degree:
                kept.append((a, b))
                deg[a] += 1
                deg[b] += 1
        cand = kept
    return Graph(pos, np.array(cand, dtype=np.int64).reshape(-1, 2))


@st.composite
def graphs(draw, min_nodes=1, max_nodes=12, min_edges=0, max_degree=None):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(min_nodes, max_nodes))
    p = draw(st.floats(0.1, 0.9))
    g = random_graph(np.random.default_rng(seed), n, p, max_degree)
    if g.n_edges < min_edges:
        from hypothesis import assume
        assume(False)
    return g


@pytest.fixture
def triangle():
    return Graph(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1], [1, 2], [0, 2]]))


@pytest.fixture
def path4():
    return Graph(np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]), np.array([[0, 1], [1, 2], [2, 3]]))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
