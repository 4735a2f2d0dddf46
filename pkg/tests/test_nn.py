import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webgen import nn
from webgen.argen import ArGenConfig, ArGenNet, ConditionEncoder
from webgen.diffusion import UNet1d, UNetConfig

TOL = 1e-4


def rng():
    return np.random.default_rng(0)


def check(module, inputs, wrt=(0,), tol=TOL, **kw):
    rep = nn.grad_check(module, inputs, wrt=wrt, **kw)
    assert rep.passed(tol), rep.errors
    return rep


class WithToken(nn.Module):
    """Transformer miniature whose checked input excludes the fixed start-token row."""

    def __init__(self, net):
        super().__init__()
        self.net = self.child("net", net)

    def forward(self, rows, c):
        tok = np.full((rows.shape[0], 1, rows.shape[2]), 2.0)
        return self.net.forward(np.concatenate([tok, rows], axis=1), c)

    def backward(self, dy):
        return self.net.backward(dy)[:, 1:]


# --- linear / conv ------------------------------------------------------------

def test_linear_identity_and_scalar():
    lin = nn.Linear(4, 4, rng())
    lin.params["W"] = np.eye(4)
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert np.array_equal(lin.forward(x), x)
    s = nn.Linear(1, 1, rng())
    s.params["W"][:] = 2.0
    s.params["b"][:] = 0.5
    s.forward(np.array([[3.0]]))
    s.zero_grad()
    s.backward(np.array([[1.0]]))
    assert s.grads["W"][0, 0] == 3.0 and s.grads["b"][0] == 1.0
    with pytest.raises(ValueError):
        lin.forward(np.zeros((2, 3)))


def test_linear_gradcheck():
    check(nn.Linear(5, 3, rng()), (np.random.default_rng(1).normal(size=(2, 4, 5)),))


def test_conv_identity_and_box():
    c = nn.Conv1d(1, 1, rng())
    c.params["W"][:] = [[[0, 1, 0]]]
    x = np.random.default_rng(1).normal(size=(2, 1, 9))
    assert np.allclose(c.forward(x), x)
    c.params["W"][:] = [[[1, 1, 1]]]
    y = c.forward(np.full((1, 1, 6), 2.5))
    assert y[0, 0].tolist() == [5.0, 7.5, 7.5, 7.5, 7.5, 5.0]


@pytest.mark.parametrize("stride,length", [(1, 16), (4, 64), (4, 16)])
def test_conv_gradcheck(stride, length):
    conv = nn.Conv1d(3, 4, rng(), stride=stride)
    x = np.random.default_rng(2).normal(size=(2, 3, length))
    assert conv.forward(x).shape[2] == (length + 2 - 3) // stride + 1
    check(conv, (x,))


def test_conv_shape_error():
    with pytest.raises(ValueError):
        nn.Conv1d(3, 4, rng()).forward(np.zeros((2, 2, 8)))


# --- norms, activations, embeddings ------------------------------------------------

@pytest.mark.parametrize("layer,shape", [(nn.LayerNorm(6), (3, 4, 6)), (nn.ChannelNorm(5), (2, 5, 7)),
                                         (nn.SiLU(), (3, 7)), (nn.GELU(), (3, 7))])
def test_pointwise_and_norm_gradcheck(layer, shape):
    if layer.params:
        for k in layer.params:
            layer.params[k] = layer.params[k] + np.random.default_rng(4).normal(size=layer.params[k].shape) * 0.1
    check(layer, (np.random.default_rng(3).normal(size=shape),), max_entries=20)


def test_fourier_embedding():
    e = nn.fourier_embed(np.array(0.0), 8)
    assert np.all(e[0::2] == 0) and np.all(e[1::2] == 1)
    with pytest.raises(ValueError):
        nn.fourier_embed(np.zeros(2), 7)
    emb = nn.fourier_embed(np.arange(96.0), 64)
    d = np.linalg.norm(emb[:, None] - emb[None], axis=-1)
    assert np.all(d[~np.eye(96, dtype=bool)] > 1e-6)
    # derivative of each component is bounded by its frequency
    w = np.repeat(nn.fourier_frequencies(16), 2)
    c = np.random.default_rng(0).uniform(-100, 100, 500)
    h = 1e-6
    deriv = (nn.fourier_embed(c + h, 16) - nn.fourier_embed(c - h, 16)) / (2 * h)
    assert np.all(np.abs(deriv) <= w * (1 + 1e-6) + 1e-9)
    check(nn.FourierEmbedding(16), (np.random.default_rng(1).uniform(-5, 5, size=(3, 7)),), check_params=False)


def test_condition_encoder_gradcheck():
    check(ConditionEncoder(8, rng()), (np.random.default_rng(1).uniform(-1, 1, (3, 7)),))


# --- attention -----------------------------------------------------------------

def test_attention_single_position_returns_value_row():
    att = nn.MultiHeadAttention(4, 1, rng())
    x = np.random.default_rng(1).normal(size=(1, 1, 4))
    v = att.v.forward(x)
    assert np.allclose(att.forward(x), att.o.forward(v))


def test_attention_rows_sum_to_one_and_mask():
    att = nn.MultiHeadAttention(8, 2, rng(), causal=True)
    att.forward(np.random.default_rng(1).normal(size=(2, 5, 8)))
    w = att.last_weights
    assert np.allclose(w.sum(-1), 1, atol=1e-6)
    assert np.all(w[..., np.triu_indices(5, 1)[0], np.triu_indices(5, 1)[1]] == 0)
    m = nn.causal_mask(3)
    assert m[0, 1] == -np.inf and m[1, 0] == 0


def test_attention_head_divisibility():
    with pytest.raises(ValueError):
        nn.MultiHeadAttention(10, 3, rng())


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9))
def test_causal_perturbation_property(seed, t):
    r = np.random.default_rng(seed)
    blk = nn.TransformerBlock(8, 2, r, d_context=6, causal=True)
    x = r.normal(size=(1, t, 8))
    ctx = r.normal(size=(1, 3, 6))
    j = int(r.integers(0, t - 1))
    y1 = blk.forward(x, ctx)
    x2 = x.copy()
    x2[0, j + 1:] += r.normal(size=(t - j - 1, 8))
    y2 = blk.forward(x2, ctx)
    assert np.max(np.abs(y1[0, :j + 1] - y2[0, :j + 1])) <= 1e-12


def test_unmasked_attention_permutation_equivariant_over_keys():
    r = np.random.default_rng(5)
    att = nn.MultiHeadAttention(8, 2, r, d_context=5)
    x, ctx = r.normal(size=(1, 4, 8)), r.normal(size=(1, 6, 5))
    p = r.permutation(6)
    assert np.allclose(att.forward(x, ctx), att.forward(x, ctx[:, p]), atol=1e-12)


@pytest.mark.parametrize("causal", [False, True])
def test_self_attention_gradcheck(causal):
    check(nn.MultiHeadAttention(8, 2, rng(), causal=causal), (np.random.default_rng(1).normal(size=(2, 5, 8)),))


def test_cross_attention_gradcheck():
    r = np.random.default_rng(1)
    check(nn.MultiHeadAttention(8, 2, rng(), d_context=6), (r.normal(size=(2, 5, 8)), r.normal(size=(2, 3, 6))),
          wrt=(0, 1))


def test_transformer_block_gradcheck():
    r = np.random.default_rng(1)
    check(nn.TransformerBlock(8, 2, rng(), d_context=6, ff_mult=2, causal=True),
          (r.normal(size=(2, 5, 8)), r.normal(size=(2, 3, 6))), wrt=(0, 1))


def test_resnet_and_attention_blocks_gradcheck():
    r = np.random.default_rng(1)
    check(nn.ResnetBlock1d(3, 5, 6, rng()), (r.normal(size=(2, 3, 8)), r.normal(size=(2, 6))), wrt=(0, 1))
    check(nn.AttentionBlock1d(4, 2, 6, 2.0, rng()), (r.normal(size=(2, 4, 8)), r.normal(size=(2, 3, 6))),
          wrt=(0, 1))


# --- composed miniatures -------------------------------------------------------

def mini_unet(in_features=5, length=16):
    cfg = UNetConfig(in_features=in_features, length=length, channels=4, multipliers=[1, 2, 2],
                     factors=[4, 4], n_blocks=[1, 1], attn_depths=[1, 1], heads=2, d_cond=8)
    return UNet1d(cfg, rng())


def test_unet_miniature_gradcheck():
    net = mini_unet()
    # the output convolution starts at zero; give it weights so every path is exercised
    for _, m, k in net.named_parameters():
        m.params[k] = m.params[k] + np.random.default_rng(7).normal(size=m.params[k].shape) * 0.05
    r = np.random.default_rng(1)
    z = r.normal(size=(2, 16, 5))
    check(net, (z, np.array([3, 50]), r.uniform(-1, 1, (2, 7))), tol=1e-3, max_entries=4)


def test_transformer_miniature_gradcheck():
    cfg = ArGenConfig(max_nodes=6, dim=8, depth=2, heads=2, d_cond=6)
    net = WithToken(ArGenNet(cfg, rng()))
    r = np.random.default_rng(1)
    check(net, (r.uniform(-1, 1, (2, 5, 9)), r.uniform(-1, 1, (2, 7))), max_entries=6)


# --- adam ---------------------------------------------------------------------------

class Scalar(nn.Module):
    def __init__(self, w):
        super().__init__()
        self.param("w", np.array([w], dtype=float))


def test_adam_zero_gradient():
    s = Scalar(1.5)
    opt = nn.Adam(s)
    opt.step()
    assert s.params["w"][0] == 1.5 and opt.m["w"][0] == 0 and opt.v["w"][0] == 0
    s.grads["w"][:] = 2.0
    opt.step()
    m, v = opt.m["w"][0], opt.v["w"][0]
    s.grads["w"][:] = 0.0
    opt.step()
    assert np.isclose(opt.m["w"][0], 0.9 * m) and np.isclose(opt.v["w"][0], 0.999 * v)


def test_adam_first_step_is_lr_sign():
    for g in (-7.0, 0.01, 1e4):
        s = Scalar(0.0)
        opt = nn.Adam(s, lr=2e-4)
        s.grads["w"][:] = g
        opt.step()
        assert np.isclose(s.params["w"][0], -2e-4 * np.sign(g), rtol=1e-4)


def test_adam_scalar_quadratic():
    s = Scalar(0.0)
    opt = nn.Adam(s, lr=0.05)
    for _ in range(200):
        s.zero_grad()
        s.grads["w"][:] = 2 * (s.params["w"] - 3.0)
        opt.step()
    assert abs(s.params["w"][0] - 3.0) < 0.5


def test_adam_rejects_nonfinite_and_shape_mismatch():
    s = Scalar(0.0)
    opt = nn.Adam(s)
    s.grads["w"][:] = np.nan
    with pytest.raises(nn.NonFiniteError):
        opt.step()
    s.grads["w"] = np.zeros(2)
    with pytest.raises(ValueError):
        opt.step()


def test_adam_clipping_bounds_update_direction():
    s = Scalar(0.0)
    opt = nn.Adam(s, lr=1.0, clip_norm=1.0)
    s.grads["w"][:] = 100.0
    assert opt.step() == 100.0
    assert np.isclose(s.params["w"][0], -1.0, rtol=1e-6)


def test_state_dict_round_trip():
    a = nn.Linear(3, 2, np.random.default_rng(0))
    b = nn.Linear(3, 2, np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    x = np.ones((1, 3))
    assert np.array_equal(a.forward(x), b.forward(x))
    with pytest.raises(KeyError):
        b.load_state_dict({})


def test_check_finite():
    with pytest.raises(nn.NonFiniteError):
        nn.check_finite(np.array([1.0, np.inf]), "x")
