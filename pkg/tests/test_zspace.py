import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webgen import zspace
from webgen.dataset import GraphSample, NormalizationParams, build_dataset, synthetic_web
from webgen.graph import Graph, GraphError, permute, validate

P = NormalizationParams(1.0, np.zeros(7), np.ones(7))


def unit_edge():
    return Graph(np.array([[-0.5, 0, 0], [0.5, 0, 0]]), np.array([[0, 1]]))


def test_codec_definition_and_ties():
    c = zspace.AnalogIndexCodec(64)
    assert c.encode(0) == -1 and c.encode(64) == 1 and c.encode(32) == 0
    assert np.array_equal(c.decode(c.encode(np.arange(65))), np.arange(65))
    # (a+1)*32 = 2.5 and 3.5 sit exactly halfway: ties go to the even index
    assert c.decode(2.5 / 32 - 1) == 2 and c.decode(3.5 / 32 - 1) == 4
    assert c.decode(-7.0) == 0 and c.decode(9.0) == 64


def test_sparse_empty_sample():
    z = zspace.encode_sparse(Graph(np.zeros((0, 3))), P)
    assert z.shape == (64, 9)
    assert np.all(z[:, :3] == 0) and np.all(z[:, 3:] == -1)
    assert zspace.decode_sparse(z, P).graph.n_nodes == 0


def test_sparse_unit_edge_slots():
    z = zspace.encode_sparse(unit_edge(), P)
    idx = zspace.AnalogIndexCodec(64).decode(z[:, 3:])
    assert idx[0].tolist() == [2, 0, 0, 0, 0, 0]
    assert idx[1].tolist() == [1, 0, 0, 0, 0, 0]
    assert np.all(idx[2:] == 0)


def test_sparse_union_rule():
    z = zspace.encode_sparse(Graph(np.zeros((0, 3))), P)
    z[0, :3] = [0.1, 0, 0]
    z[1, :3] = [0.2, 0, 0]
    z[0, 3] = zspace.AnalogIndexCodec().encode(2)
    g = zspace.decode_sparse(z, P).graph
    assert g.n_nodes == 2 and g.edges.tolist() == [[0, 1]]


def test_sparse_drops_self_and_out_of_range():
    z = zspace.encode_sparse(unit_edge(), P, max_nodes=4)
    codec = zspace.AnalogIndexCodec(4)
    z[0, 4] = codec.encode(1)  # self reference
    g = zspace.decode_sparse(z, P, max_nodes=4).graph
    assert g.edges.tolist() == [[0, 1]]
    z = np.full((3, 9), -1.0)
    z[:, :3] = 0
    z[0, 3] = zspace.AnalogIndexCodec(64).encode(40)  # refers to a row that does not exist
    assert zspace.decode_sparse(z, P).graph.n_nodes == 0


def test_sparse_errors():
    star = Graph(np.random.default_rng(0).normal(size=(8, 3)), np.array([[0, i] for i in range(1, 8)]))
    with pytest.raises(GraphError, match="degree"):
        zspace.encode_sparse(star, P)
    with pytest.raises(GraphError, match="more than"):
        zspace.encode_sparse(Graph(np.zeros((65, 3))), P)


def test_full_triangle(triangle):
    z = zspace.encode_full(triangle, P)
    adj = z[:3, 3:6]
    assert np.sum(z[:, 3:] == 1) == 6 and np.array_equal(adj, adj.T)
    assert np.all(z[3:, :3] == 0) and np.all(z[3:, 3:] == -1)
    out = zspace.decode_full(z, P).graph
    assert out == triangle


def test_full_all_negative_is_empty():
    z = -np.ones((64, 67))
    assert zspace.decode_full(z, P).graph.n_nodes == 0


def test_full_symmetric_threshold():
    z = zspace.encode_full(unit_edge(), P)
    z[0, 4] = 0.6
    z[1, 3] = -0.5  # average 0.05 > 0: edge survives
    assert zspace.decode_full(z, P).graph.n_edges == 1
    z[1, 3] = -0.7  # average -0.05: gone
    assert zspace.decode_full(z, P).graph.n_nodes == 0


def test_start_token():
    z = zspace.encode_full(unit_edge(), P)
    t = zspace.prepend_start_token(z)
    assert t.shape[0] == z.shape[0] + 1
    assert np.all(t[0] == zspace.START_TOKEN_VALUE)
    assert not np.any(np.all(np.abs(z) <= 1, axis=1) & np.all(t[0] == z, axis=1))
    assert np.array_equal(zspace.strip_start_token(t), z)
    with pytest.raises(ValueError):
        zspace.strip_start_token(z)


def _samples(seed, n):
    g = synthetic_web(400, jitter=0.3, seed=seed, keep=(0.0, 0.6))
    ds = build_dataset(g)
    return [s for s in ds.samples[:n] if s.graph.n_edges]


@pytest.mark.parametrize("kind", ["sparse", "full"])
def test_round_trip_many(kind):
    enc = zspace.encode_sparse if kind == "sparse" else zspace.encode_full
    dec = (lambda z, p: zspace.decode_sparse(z, p)) if kind == "sparse" else zspace.decode_full
    samples = _samples(0, 200)
    p = NormalizationParams(max(np.abs(s.graph.positions).max() for s in samples), np.zeros(7), np.ones(7))
    for s in samples:
        out = dec(enc(s, p), p).graph
        assert np.array_equal(out.edges, s.graph.edges)
        assert np.allclose(out.positions, s.graph.positions, atol=1e-6 * p.coord_scale, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sparse_encoding_is_deterministic_and_valid(seed):
    rng = np.random.default_rng(seed)
    s = _cached[int(rng.integers(len(_cached)))]
    z1 = zspace.encode_sparse(s, _P)
    z2 = zspace.encode_sparse(GraphSample(Graph(s.graph.positions.copy(), s.graph.edges.copy()), 0), _P)
    assert np.array_equal(z1, z2)
    assert np.all(np.abs(z1) <= 1)
    noisy = z1 + rng.normal(scale=0.3, size=z1.shape)
    assert validate(zspace.decode_sparse(noisy, _P).graph) == []
    assert validate(zspace.decode_full(rng.normal(size=(64, 67)), _P).graph) == []


_cached = _samples(1, 60)
_P = NormalizationParams(max(np.abs(s.graph.positions).max() for s in _cached), np.zeros(7), np.ones(7))
